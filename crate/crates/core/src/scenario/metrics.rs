//! Run metrics, computed from log records alone, and their export.
//!
//! CSV columns, in order:
//!
//! ```text
//! scenario_id,seed,duration_s,ticks,start_latency_s,triggers_measured,
//! mean_tracking_error_cm,max_tracking_error_cm,total_path_length_cm,
//! mean_convergence_time_s,goals_converged,goals_total,msgs_sent,
//! msgs_dropped,msgs_delivered,msgs_stale,widget_updates
//! ```
//!
//! Floats use six significant digits (`%#.6g`); missing values are empty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, Point};
use crate::net::latency::{measure_start_latency, LatencyEvent};
use crate::robot::{is_at_goal, RobotState};
use crate::widgets::Params;

use super::log::{LogRecord, LoggedGoal, MsgEvent, RoomTick, RunEvent};
use super::spec::Side;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerLatency {
    pub label: String,
    pub room: Side,
    pub robot: String,
    pub trigger_t: f64,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    /// `room/robot`.
    pub robot: String,
    pub goal_t: f64,
    /// `None` when the goal changed or vanished before being reached.
    pub time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetSample {
    pub t: f64,
    pub room: Side,
    pub widget: String,
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MessageStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub stale: u64,
    pub corrupt: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario_id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub ticks: u64,
    /// Mean over measured triggers.
    pub start_latency_s: Option<f64>,
    pub start_latencies: Vec<TriggerLatency>,
    pub mean_tracking_error_cm: Option<f64>,
    pub max_tracking_error_cm: Option<f64>,
    /// Keyed by `room/robot`.
    pub path_length_cm: BTreeMap<String, f64>,
    pub convergence: Vec<ConvergenceRecord>,
    pub widget_timeline: Vec<WidgetSample>,
    pub messages: MessageStats,
}

impl RunMetrics {
    pub fn total_path_length_cm(&self) -> f64 {
        self.path_length_cm.values().sum()
    }

    pub fn mean_convergence_time_s(&self) -> Option<f64> {
        mean(self.convergence.iter().filter_map(|c| c.time_s))
    }

    /// Most recent parameters of a widget as seen in `room`.
    pub fn last_widget_params(&self, room: Side, widget: &str) -> Option<&Params> {
        self.widget_timeline
            .iter()
            .rev()
            .find(|s| s.room == room && s.widget == widget)
            .map(|s| &s.params)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn room_of<'a>(side: Side, remote: &'a RoomTick, local: &'a RoomTick) -> &'a RoomTick {
    match side {
        Side::Remote => remote,
        Side::Local => local,
    }
}

#[derive(Debug)]
struct Episode {
    goal: LoggedGoal,
    start: f64,
    converged: bool,
}

fn goal_jumped(a: &LoggedGoal, b: &LoggedGoal) -> bool {
    let moved = Point::new(a.x, a.y).distance(Point::new(b.x, b.y));
    let turned = match (a.heading, b.heading) {
        (Some(x), Some(y)) => angle_diff_deg(x, y).abs() > 2.0 * crate::robot::HEADING_TOLERANCE_DEG,
        (None, None) => false,
        _ => true,
    };
    moved > 2.0 * b.tol || turned
}

/// Everything is derived from `records`; running and replaying agree exactly.
pub fn compute_metrics(records: &[LogRecord]) -> RunMetrics {
    let mut m = RunMetrics::default();
    let spec = records.iter().find_map(|r| match r {
        LogRecord::Header { scenario, .. } => Some(scenario.as_ref()),
        _ => None,
    });
    let selection: Vec<String> = spec.map(|s| s.metrics.clone()).unwrap_or_default();
    let on = |name: &str| selection.is_empty() || selection.iter().any(|s| s == name);
    if let Some(s) = spec {
        m.scenario_id = s.id.clone();
        m.seed = s.seed;
        m.duration_s = s.duration_s;
    }

    let mut triggers = Vec::new();
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    let mut err_max: Option<f64> = None;
    let mut episodes: BTreeMap<String, Episode> = BTreeMap::new();
    let mut last_pos: BTreeMap<String, Point> = BTreeMap::new();

    for rec in records {
        match rec {
            LogRecord::Msg { ev, .. } => match ev {
                MsgEvent::Sent => m.messages.sent += 1,
                MsgEvent::Dropped => {
                    m.messages.sent += 1;
                    m.messages.dropped += 1;
                }
                MsgEvent::Accepted => m.messages.delivered += 1,
                MsgEvent::Stale => {
                    m.messages.delivered += 1;
                    m.messages.stale += 1;
                }
            },
            LogRecord::Event { t, room, event } => match event {
                RunEvent::Trigger { label, robot } => triggers.push((*t, label.clone(), *room, robot.clone())),
                RunEvent::WidgetParams { widget, params, .. } => m.widget_timeline.push(WidgetSample {
                    t: *t,
                    room: *room,
                    widget: widget.clone(),
                    params: params.clone(),
                }),
                RunEvent::Corrupt { .. } => m.messages.corrupt += 1,
                _ => {}
            },
            LogRecord::Tick { t, remote, local } | LogRecord::End { t, remote, local, .. } => {
                let is_tick = matches!(rec, LogRecord::Tick { .. });
                if is_tick {
                    m.ticks += 1;
                }
                for side in [Side::Remote, Side::Local] {
                    let room = room_of(side, remote, local);
                    for r in &room.robots {
                        let key = format!("{}/{}", side.name(), r.id);
                        let p = r.pose.position();
                        if let Some(prev) = last_pos.insert(key.clone(), p) {
                            *m.path_length_cm.entry(key.clone()).or_insert(0.0) += prev.distance(p);
                        } else {
                            m.path_length_cm.entry(key.clone()).or_insert(0.0);
                        }
                        if !is_tick {
                            continue;
                        }
                        let goal = room.goals.get(&r.id);
                        let fresh = match (episodes.get(&key), goal) {
                            (Some(ep), Some(g)) => goal_jumped(&ep.goal, g),
                            (None, Some(_)) => true,
                            (_, None) => false,
                        };
                        if fresh || goal.is_none() {
                            if let Some(ep) = episodes.remove(&key) {
                                if !ep.converged {
                                    m.convergence.push(ConvergenceRecord {
                                        robot: key.clone(),
                                        goal_t: ep.start,
                                        time_s: None,
                                    });
                                }
                            }
                        }
                        let Some(g) = goal else { continue };
                        let ep = episodes.entry(key.clone()).or_insert_with(|| Episode {
                            goal: g.clone(),
                            start: *t,
                            converged: false,
                        });
                        ep.goal = g.clone();
                        let mut state = RobotState::new(r.id.clone(), r.pose);
                        state.grabbed_by_local = r.grabbed;
                        if !ep.converged && is_at_goal(&state, &g.to_goal()) {
                            ep.converged = true;
                            m.convergence.push(ConvergenceRecord {
                                robot: key.clone(),
                                goal_t: ep.start,
                                time_s: Some(*t - ep.start),
                            });
                        }
                        if ep.converged {
                            let e = p.distance(Point::new(g.x, g.y));
                            err_sum += e;
                            err_n += 1;
                            err_max = Some(err_max.map_or(e, |x: f64| x.max(e)));
                        }
                    }
                }
            }
            LogRecord::Header { .. } => {}
        }
    }
    for (key, ep) in episodes {
        if !ep.converged {
            m.convergence.push(ConvergenceRecord {
                robot: key,
                goal_t: ep.start,
                time_s: None,
            });
        }
    }
    if err_n > 0 {
        m.mean_tracking_error_cm = Some(err_sum / err_n as f64);
        m.max_tracking_error_cm = err_max;
    }

    for (t, label, room, robot) in triggers {
        let mut events = vec![LatencyEvent::Trigger {
            t,
            label: label.clone(),
        }];
        for rec in records {
            if let LogRecord::Tick { t: tt, remote, local } = rec {
                if *tt >= t {
                    let moving = room_of(room, remote, local).commands.contains_key(&robot);
                    if moving {
                        events.push(LatencyEvent::Command {
                            t: *tt,
                            robot_id: robot.clone(),
                            moving,
                        });
                        break;
                    }
                }
            }
        }
        m.start_latencies.push(TriggerLatency {
            latency_s: measure_start_latency(&events, &label, &robot).ok(),
            label,
            room,
            robot,
            trigger_t: t,
        });
    }
    m.start_latency_s = mean(m.start_latencies.iter().filter_map(|l| l.latency_s));

    if !on("start_latency") {
        m.start_latency_s = None;
        m.start_latencies.clear();
    }
    if !on("tracking_error") {
        m.mean_tracking_error_cm = None;
        m.max_tracking_error_cm = None;
    }
    if !on("path_length") {
        m.path_length_cm.clear();
    }
    if !on("convergence_time") {
        m.convergence.clear();
    }
    if !on("widget_params") {
        m.widget_timeline.clear();
    }
    if !on("message_stats") {
        m.messages = MessageStats::default();
    }
    m
}

/// C-style `%#.6g`: six significant digits, trailing zeros kept.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0.00000".into()
        } else {
            "0.00000".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let digits = (5 - exp) as usize;
        let fixed = format!("{x:.digits$}");
        if digits == 0 {
            fixed + "."
        } else {
            fixed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 17] = [
    "scenario_id",
    "seed",
    "duration_s",
    "ticks",
    "start_latency_s",
    "triggers_measured",
    "mean_tracking_error_cm",
    "max_tracking_error_cm",
    "total_path_length_cm",
    "mean_convergence_time_s",
    "goals_converged",
    "goals_total",
    "msgs_sent",
    "msgs_dropped",
    "msgs_delivered",
    "msgs_stale",
    "widget_updates",
];

/// One CSV row in typed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub ticks: u64,
    pub start_latency_s: Option<f64>,
    pub triggers_measured: u64,
    pub mean_tracking_error_cm: Option<f64>,
    pub max_tracking_error_cm: Option<f64>,
    pub total_path_length_cm: f64,
    pub mean_convergence_time_s: Option<f64>,
    pub goals_converged: u64,
    pub goals_total: u64,
    pub msgs_sent: u64,
    pub msgs_dropped: u64,
    pub msgs_delivered: u64,
    pub msgs_stale: u64,
    pub widget_updates: u64,
}

impl From<&RunMetrics> for MetricsRow {
    fn from(m: &RunMetrics) -> Self {
        Self {
            scenario_id: m.scenario_id.clone(),
            seed: m.seed,
            duration_s: m.duration_s,
            ticks: m.ticks,
            start_latency_s: m.start_latency_s,
            triggers_measured: m.start_latencies.iter().filter(|l| l.latency_s.is_some()).count() as u64,
            mean_tracking_error_cm: m.mean_tracking_error_cm,
            max_tracking_error_cm: m.max_tracking_error_cm,
            total_path_length_cm: m.total_path_length_cm(),
            mean_convergence_time_s: m.mean_convergence_time_s(),
            goals_converged: m.convergence.iter().filter(|c| c.time_s.is_some()).count() as u64,
            goals_total: m.convergence.len() as u64,
            msgs_sent: m.messages.sent,
            msgs_dropped: m.messages.dropped,
            msgs_delivered: m.messages.delivered,
            msgs_stale: m.messages.stale,
            widget_updates: m.widget_timeline.len() as u64,
        }
    }
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_g6).unwrap_or_default()
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        [
            csv_text(&self.scenario_id),
            self.seed.to_string(),
            format_g6(self.duration_s),
            self.ticks.to_string(),
            opt(self.start_latency_s),
            self.triggers_measured.to_string(),
            opt(self.mean_tracking_error_cm),
            opt(self.max_tracking_error_cm),
            format_g6(self.total_path_length_cm),
            opt(self.mean_convergence_time_s),
            self.goals_converged.to_string(),
            self.goals_total.to_string(),
            self.msgs_sent.to_string(),
            self.msgs_dropped.to_string(),
            self.msgs_delivered.to_string(),
            self.msgs_stale.to_string(),
            self.widget_updates.to_string(),
        ]
        .join(",")
    }
}

/// Header row plus one row per run for CSV; a JSON array of full metrics otherwise.
pub fn export_metrics(metrics: &[RunMetrics], format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
            s.push('\n');
            s.into_bytes()
        }
        ExportFormat::Csv => {
            let mut s = CSV_COLUMNS.join(",");
            s.push('\n');
            for m in metrics {
                s.push_str(&MetricsRow::from(m).to_csv_line());
                s.push('\n');
            }
            s.into_bytes()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("csv line {line}: {reason}")]
pub struct CsvError {
    pub line: usize,
    pub reason: String,
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Reads rows written by [`export_metrics`] in CSV form.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header != CSV_COLUMNS.join(",") {
        return Err(CsvError {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CsvError { line: i + 1, reason };
        let cells = split_csv(line);
        if cells.len() != CSV_COLUMNS.len() {
            return Err(err(format!(
                "expected {} cells, got {}",
                CSV_COLUMNS.len(),
                cells.len()
            )));
        }
        let f = |j: usize| -> Result<f64, CsvError> {
            cells[j]
                .parse()
                .map_err(|_| err(format!("bad number in {}", CSV_COLUMNS[j])))
        };
        let of = |j: usize| -> Result<Option<f64>, CsvError> {
            if cells[j].is_empty() {
                Ok(None)
            } else {
                f(j).map(Some)
            }
        };
        let u = |j: usize| -> Result<u64, CsvError> {
            cells[j]
                .parse()
                .map_err(|_| err(format!("bad integer in {}", CSV_COLUMNS[j])))
        };
        rows.push(MetricsRow {
            scenario_id: cells[0].clone(),
            seed: u(1)?,
            duration_s: f(2)?,
            ticks: u(3)?,
            start_latency_s: of(4)?,
            triggers_measured: u(5)?,
            mean_tracking_error_cm: of(6)?,
            max_tracking_error_cm: of(7)?,
            total_path_length_cm: f(8)?,
            mean_convergence_time_s: of(9)?,
            goals_converged: u(10)?,
            goals_total: u(11)?,
            msgs_sent: u(12)?,
            msgs_dropped: u(13)?,
            msgs_delivered: u(14)?,
            msgs_stale: u(15)?,
            widget_updates: u(16)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_g6(0.2), "0.200000");
        assert_eq!(format_g6(1234.5678), "1234.57");
        assert_eq!(format_g6(1.0), "1.00000");
        assert_eq!(format_g6(0.0), "0.00000");
        assert_eq!(format_g6(123456.0), "123456.");
        assert_eq!(format_g6(1234567.0), "1.23457e+06");
        assert_eq!(format_g6(0.0000123), "1.23000e-05");
        assert_eq!(format_g6(0.0001), "0.000100000");
        assert_eq!(format_g6(999999.5), "1.00000e+06");
        assert_eq!(format_g6(-2.5), "-2.50000");
    }

    #[test]
    fn csv_has_header_and_one_row() {
        let m = RunMetrics {
            scenario_id: "x".into(),
            start_latency_s: Some(0.2),
            ..RunMetrics::default()
        };
        let text = String::from_utf8(export_metrics(&[m], ExportFormat::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].split(',').any(|c| c == "0.200000"));
        let rows = parse_metrics_csv(&text).unwrap();
        assert_eq!(rows[0].start_latency_s, Some(0.2));
        assert_eq!(rows[0].mean_tracking_error_cm, None);
    }

    #[test]
    fn quoted_ids_survive() {
        let m = RunMetrics {
            scenario_id: "a,\"b\"".into(),
            ..RunMetrics::default()
        };
        let text = String::from_utf8(export_metrics(&[m], ExportFormat::Csv)).unwrap();
        assert_eq!(parse_metrics_csv(&text).unwrap()[0].scenario_id, "a,\"b\"");
    }

    #[test]
    fn no_records_no_metrics() {
        let m = compute_metrics(&[]);
        assert_eq!(m, RunMetrics::default());
    }
}
