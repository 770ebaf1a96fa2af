//! JSON Lines run log and replay.
//!
//! Record kinds, one JSON object per line, each tagged by `"kind"`:
//!
//! | kind     | fields                                                        |
//! |----------|---------------------------------------------------------------|
//! | `header` | `format`, `version`, `scenario` (effective spec)              |
//! | `msg`    | `t`, `from`, `ev`, `msg_type`, `subject`, `seq`               |
//! | `event`  | `t`, `room`, `event` (object tagged by `"type"`)              |
//! | `tick`   | `t`, `remote`, `local` (robots, goals, commands, deltas)      |
//! | `end`    | `t`, `remote`, `local`, `link`                                |
//!
//! Tick records hold every robot's pre-step state; objects and pen point
//! counts appear only when they changed since the previous tick.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::bridge::LinkParams;
use crate::net::LinkStats;
use crate::robot::{GoalSpec, MotorCommand};
use crate::sim::{ObjectSnapshot, RobotSnapshot, WorldSnapshot};
use crate::widgets::Params;

use super::spec::{ScenarioSpec, Side};

pub const LOG_FORMAT: &str = "telebots-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgEvent {
    Sent,
    Dropped,
    Accepted,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedGoal {
    pub x: f64,
    pub y: f64,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

impl From<&GoalSpec> for LoggedGoal {
    fn from(g: &GoalSpec) -> Self {
        Self {
            x: g.target.x,
            y: g.target.y,
            tol: g.tolerance,
            heading: g.target_heading,
        }
    }
}

impl LoggedGoal {
    pub fn to_goal(&self) -> GoalSpec {
        GoalSpec {
            target: crate::geometry::Point::new(self.x, self.y),
            target_heading: self.heading,
            tolerance: self.tol,
            priority: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomTick {
    pub robots: Vec<RobotSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<ObjectSnapshot>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pen_points: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub goals: BTreeMap<String, LoggedGoal>,
    /// Non-zero commands only, as `[v, omega]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub commands: BTreeMap<String, [f64; 2]>,
}

impl RoomTick {
    pub fn command(&self, robot: &str) -> MotorCommand {
        self.commands
            .get(robot)
            .map(|c| MotorCommand::new(c[0], c[1]))
            .unwrap_or(MotorCommand::STOP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEvent {
    Trigger {
        label: String,
        robot: String,
    },
    UnresolvedSource {
        binding_id: String,
        source_key: String,
    },
    ManualGrabDetected {
        robot: String,
    },
    GrabChanged {
        robot: String,
        grabbed: bool,
    },
    RemoteGrab {
        subject: String,
        grabbed: bool,
    },
    WidgetParams {
        widget: String,
        params: Params,
        origin: Side,
    },
    BindingChanged {
        binding: String,
        active: bool,
    },
    LinkParams {
        params: LinkParams,
    },
    Corrupt {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        format: String,
        version: u32,
        scenario: Box<ScenarioSpec>,
    },
    Msg {
        t: f64,
        from: Side,
        ev: MsgEvent,
        msg_type: String,
        subject: String,
        seq: u32,
    },
    Event {
        t: f64,
        room: Side,
        event: RunEvent,
    },
    Tick {
        t: f64,
        remote: RoomTick,
        local: RoomTick,
    },
    End {
        t: f64,
        remote: RoomTick,
        local: RoomTick,
        /// Per sending side: remote, then local.
        link: [LinkStats; 2],
    },
}

/// Both rooms at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    pub t: f64,
    pub remote: WorldSnapshot,
    pub local: WorldSnapshot,
}

/// Serializes records and tracks the delta state of objects and pens.
#[derive(Debug, Default)]
pub struct LogWriter {
    out: String,
    last_objects: [Option<Vec<ObjectSnapshot>>; 2],
    last_pens: [Option<BTreeMap<String, usize>>; 2],
}

impl LogWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, record: &LogRecord) {
        self.out
            .push_str(&serde_json::to_string(record).expect("log record serializes"));
        self.out.push('\n');
    }

    /// Builds a room entry, including objects and pens only on change.
    pub fn room_tick(
        &mut self,
        side: Side,
        snap: &WorldSnapshot,
        goals: BTreeMap<String, LoggedGoal>,
        commands: BTreeMap<String, [f64; 2]>,
    ) -> RoomTick {
        let i = side.index();
        let objects = (self.last_objects[i].as_ref() != Some(&snap.objects)).then(|| snap.objects.clone());
        if objects.is_some() {
            self.last_objects[i] = Some(snap.objects.clone());
        }
        let pens = (self.last_pens[i].as_ref() != Some(&snap.pen_points)).then(|| snap.pen_points.clone());
        if pens.is_some() {
            self.last_pens[i] = Some(snap.pen_points.clone());
        }
        RoomTick {
            robots: snap.robots.clone(),
            objects,
            pen_points: pens,
            goals,
            commands,
        }
    }

    pub fn into_string(self) -> String {
        self.out
    }
}

/// Parses every line; blank trailing input is allowed.
pub fn parse_log(log: &str) -> Result<Vec<LogRecord>, ReplayError> {
    let mut out = Vec::new();
    for (i, line) in log.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| ReplayError::CorruptLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if i == 0 {
            match &rec {
                LogRecord::Header { format, version, .. } if format == LOG_FORMAT && *version == LOG_VERSION => {}
                _ => {
                    return Err(ReplayError::CorruptLog {
                        line: 1,
                        reason: "first record must be a matching header".into(),
                    })
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Rebuilds snapshots from parsed records, carrying deltas forward.
pub fn snapshots_from_records(records: &[LogRecord]) -> Vec<TickSnapshot> {
    let mut objects: [Vec<ObjectSnapshot>; 2] = Default::default();
    let mut pens: [BTreeMap<String, usize>; 2] = Default::default();
    let mut out = Vec::new();
    for rec in records {
        let (t, remote, local) = match rec {
            LogRecord::Tick { t, remote, local } | LogRecord::End { t, remote, local, .. } => (*t, remote, local),
            _ => continue,
        };
        let mut build = |side: Side, room: &RoomTick| {
            let i = side.index();
            if let Some(o) = &room.objects {
                objects[i] = o.clone();
            }
            if let Some(p) = &room.pen_points {
                pens[i] = p.clone();
            }
            WorldSnapshot {
                t,
                robots: room.robots.clone(),
                objects: objects[i].clone(),
                pen_points: pens[i].clone(),
            }
        };
        let remote = build(Side::Remote, remote);
        let local = build(Side::Local, local);
        out.push(TickSnapshot { t, remote, local });
    }
    out
}

/// Reconstructs the run's snapshots. An empty log gives none.
pub fn replay(log: &str) -> Result<Vec<TickSnapshot>, ReplayError> {
    Ok(snapshots_from_records(&parse_log(log)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_replays_to_nothing() {
        assert_eq!(replay("").unwrap(), Vec::new());
    }

    #[test]
    fn bad_first_line() {
        let err =
            replay("{\"kind\":\"tick\",\"t\":0,\"remote\":{\"robots\":[]},\"local\":{\"robots\":[]}}\n").unwrap_err();
        assert!(matches!(err, ReplayError::CorruptLog { line: 1, .. }));
    }

    #[test]
    fn deltas_carry_forward() {
        let mut w = LogWriter::new();
        let snap = WorldSnapshot {
            t: 0.0,
            robots: vec![],
            objects: vec![ObjectSnapshot {
                id: "o".into(),
                pose: crate::geometry::Pose2D::new(1.0, 2.0, 0.0),
            }],
            pen_points: BTreeMap::new(),
        };
        let a = w.room_tick(Side::Local, &snap, BTreeMap::new(), BTreeMap::new());
        let b = w.room_tick(Side::Local, &snap, BTreeMap::new(), BTreeMap::new());
        assert!(a.objects.is_some() && b.objects.is_none());
        let recs = vec![
            LogRecord::Tick {
                t: 0.0,
                remote: RoomTick::default(),
                local: a,
            },
            LogRecord::Tick {
                t: 0.005,
                remote: RoomTick::default(),
                local: b,
            },
        ];
        let snaps = snapshots_from_records(&recs);
        assert_eq!(snaps[1].local.objects, snap.objects);
    }
}
