//! Scenario documents: world setup for both rooms, bindings, widgets, link
//! model and timed input scripts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{validate_bindings, Binding, BindingMode, Finger};
use crate::geometry::{calibrate_manual, MatFrame, Point, Pose2D, Transform2D};
use crate::net::LinkModel;
use crate::robot::{RobotSpec, RobotState};
use crate::sim::{
    Attachment, Constraint, PassiveObject, World, DEFAULT_DT_S, DEFAULT_SENSOR_QUANTUM_CM, MAX_WORLD_DT_S,
};
use crate::widgets::{Params, WidgetSpec};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at {path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Remote,
    Local,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Remote => Side::Local,
            Side::Local => Side::Remote,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Remote => "remote",
            Side::Local => "local",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Remote => 0,
            Side::Local => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub id: String,
    pub pose: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<RobotSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    #[serde(default = "default_mats")]
    pub mats: Vec<MatFrame>,
    #[serde(default)]
    pub robots: Vec<RobotConfig>,
    #[serde(default)]
    pub objects: Vec<PassiveObject>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub vertical_slip: f64,
    /// Offset added to this peer's message timestamps, µs.
    #[serde(default)]
    pub clock_offset_us: i64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            mats: default_mats(),
            robots: Vec::new(),
            objects: Vec::new(),
            attachments: Vec::new(),
            constraints: Vec::new(),
            vertical_slip: 0.0,
            clock_offset_us: 0,
        }
    }
}

fn default_mats() -> Vec<MatFrame> {
    vec![MatFrame::new("mat0")]
}

impl RoomSpec {
    pub fn robot_ids(&self) -> BTreeSet<&str> {
        self.robots.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn build_world(&self, sensor_quantum_cm: f64, seed: u64) -> World {
        let mut world = World::new(self.mats.clone());
        for r in &self.robots {
            world.add_robot(RobotState::new(r.id.clone(), r.pose), r.spec.unwrap_or_default());
        }
        world.objects = self.objects.clone();
        world.attachments = self.attachments.clone();
        world.constraints = self.constraints.clone();
        world.vertical_slip = self.vertical_slip;
        world.sensor.quantum_cm = sensor_quantum_cm;
        world.rng_seed = seed;
        world
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rooms {
    #[serde(default)]
    pub remote: RoomSpec,
    #[serde(default)]
    pub local: RoomSpec,
}

impl Rooms {
    pub fn get(&self, side: Side) -> &RoomSpec {
        match side {
            Side::Remote => &self.remote,
            Side::Local => &self.local,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    /// Where the local user aligned the avatar, in local world coordinates.
    pub avatar_anchor: Pose2D,
    pub mat_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingConfig {
    /// Room whose robot the binding drives.
    pub room: Side,
    #[serde(flatten)]
    pub binding: Binding,
}

/// Robots that follow whichever fingers of `hand` are tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerGroup {
    pub room: Side,
    pub hand: String,
    pub robots: Vec<String>,
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetConfig {
    /// Room holding the widget's robots; the other room keeps a virtual copy.
    pub room: Side,
    #[serde(flatten)]
    pub spec: WidgetSpec,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseWaypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointWaypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// A person in `room` picks a robot up and carries it along the waypoints;
/// it is released after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualScript {
    pub room: Side,
    pub robot: String,
    pub waypoints: Vec<PoseWaypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualObjectScript {
    pub id: String,
    pub from: Side,
    pub waypoints: Vec<PointWaypoint>,
    /// Streaming stops here (tracking loss); defaults to the end of the run.
    #[serde(default)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub t: f64,
    #[serde(default)]
    pub fingers: BTreeMap<Finger, Point>,
    #[serde(default)]
    pub pinching: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandScript {
    pub id: String,
    pub from: Side,
    pub frames: Vec<HandFrame>,
    #[serde(default)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonScript {
    pub id: String,
    pub from: Side,
    pub scale: f64,
    #[serde(default = "default_joint")]
    pub joint: String,
    pub waypoints: Vec<PointWaypoint>,
    #[serde(default)]
    pub end: Option<f64>,
}

fn default_joint() -> String {
    crate::coupling::DEFAULT_MINIATURE_JOINT.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetSet {
    pub t: f64,
    pub from: Side,
    pub widget: String,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenEvent {
    pub t: f64,
    pub room: Side,
    pub robot: String,
    pub down: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindCtlEvent {
    pub t: f64,
    /// Peer issuing the command; it applies to bindings in the other room.
    pub from: Side,
    pub binding: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scripts {
    #[serde(default)]
    pub manual: Vec<ManualScript>,
    #[serde(default)]
    pub virtual_objects: Vec<VirtualObjectScript>,
    #[serde(default)]
    pub hands: Vec<HandScript>,
    #[serde(default)]
    pub skeletons: Vec<SkeletonScript>,
    #[serde(default)]
    pub widget_sets: Vec<WidgetSet>,
    #[serde(default)]
    pub pens: Vec<PenEvent>,
    #[serde(default)]
    pub bind_ctl: Vec<BindCtlEvent>,
}

/// Marks an input event whose start latency is measured on `robot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub t: f64,
    pub label: String,
    pub room: Side,
    pub robot: String,
}

pub const METRIC_NAMES: [&str; 6] = [
    "start_latency",
    "tracking_error",
    "path_length",
    "convergence_time",
    "widget_params",
    "message_stats",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default = "default_quantum")]
    pub sensor_quantum_cm: f64,
    #[serde(default = "default_rooms")]
    pub rooms: Rooms,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default)]
    pub bindings: Vec<BindingConfig>,
    #[serde(default)]
    pub finger_groups: Vec<FingerGroup>,
    #[serde(default)]
    pub widgets: Vec<WidgetConfig>,
    #[serde(default)]
    pub scripts: Scripts,
    #[serde(default)]
    pub triggers: Vec<Trigger>,
    /// Metrics to report; empty means all of [`METRIC_NAMES`].
    #[serde(default)]
    pub metrics: Vec<String>,
}

fn default_dt() -> f64 {
    DEFAULT_DT_S
}

fn default_quantum() -> f64 {
    DEFAULT_SENSOR_QUANTUM_CM
}

fn default_rooms() -> Rooms {
    Rooms {
        remote: RoomSpec::default(),
        local: RoomSpec::default(),
    }
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub latency_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub loss: Option<f64>,
    pub duration_s: Option<f64>,
}

impl ScenarioSpec {
    /// An empty scenario: two bare mats and nothing else.
    pub fn empty(id: impl Into<String>, duration_s: f64) -> Self {
        Self {
            id: id.into(),
            description: String::new(),
            duration_s,
            seed: 0,
            dt_s: DEFAULT_DT_S,
            link: LinkModel::default(),
            sensor_quantum_cm: DEFAULT_SENSOR_QUANTUM_CM,
            rooms: default_rooms(),
            calibration: None,
            bindings: Vec::new(),
            finger_groups: Vec::new(),
            widgets: Vec::new(),
            scripts: Scripts::default(),
            triggers: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let spec: ScenarioSpec =
            serde_json::from_str(text).map_err(|e| ConfigError::new(format!("line {}", e.line()), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(l) = o.latency_ms {
            self.link.one_way_latency_ms = l;
        }
        if let Some(j) = o.jitter_ms {
            self.link.jitter_ms = j;
        }
        if let Some(l) = o.loss {
            self.link.loss_rate = l;
        }
        if let Some(d) = o.duration_s {
            self.duration_s = d;
        }
        self
    }

    pub fn metric_enabled(&self, name: &str) -> bool {
        self.metrics.is_empty() || self.metrics.iter().any(|m| m == name)
    }

    /// Transform from the remote frame into the local mat frame.
    pub fn remote_to_local(&self) -> Result<Transform2D, ConfigError> {
        let Some(cal) = &self.calibration else {
            return Ok(Transform2D::IDENTITY);
        };
        let mat = self
            .rooms
            .local
            .mats
            .iter()
            .find(|m| m.id == cal.mat_id)
            .ok_or_else(|| ConfigError::new("calibration.mat_id", format!("no local mat {:?}", cal.mat_id)))?;
        calibrate_manual(cal.avatar_anchor, mat, 0.0)
            .map(|r| r.avatar_to_mat)
            .map_err(|e| ConfigError::new("calibration", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(ConfigError::new("duration_s", "must be positive"));
        }
        if !(self.dt_s > 0.0 && self.dt_s <= MAX_WORLD_DT_S) {
            return Err(ConfigError::new("dt_s", format!("must be in (0, {MAX_WORLD_DT_S}]")));
        }
        if !(self.sensor_quantum_cm >= 0.0) {
            return Err(ConfigError::new("sensor_quantum_cm", "must be >= 0"));
        }
        self.link.validate().map_err(|m| ConfigError::new("link", m))?;
        for side in [Side::Remote, Side::Local] {
            let room = self.rooms.get(side);
            room.build_world(self.sensor_quantum_cm, self.seed)
                .validate()
                .map_err(|e| ConfigError::new(format!("rooms.{}", side.name()), e.to_string()))?;
        }
        self.remote_to_local()?;

        let robot_in = |side: Side, id: &str, path: String| -> Result<(), ConfigError> {
            if self.rooms.get(side).robot_ids().contains(id) {
                Ok(())
            } else {
                Err(ConfigError::new(
                    path,
                    format!("no robot {id:?} in the {} room", side.name()),
                ))
            }
        };

        for (i, b) in self.bindings.iter().enumerate() {
            robot_in(
                b.room,
                &b.binding.target_robot_id,
                format!("bindings[{i}].target_robot_id"),
            )?;
            if b.binding.mode == BindingMode::Mirror {
                robot_in(
                    b.room.other(),
                    &b.binding.source_key,
                    format!("bindings[{i}].source_key"),
                )?;
            }
        }
        for side in [Side::Remote, Side::Local] {
            let bs: Vec<Binding> = self
                .bindings
                .iter()
                .filter(|b| b.room == side)
                .map(|b| b.binding.clone())
                .collect();
            validate_bindings(&bs).map_err(|m| ConfigError::new("bindings", m))?;
        }
        for (i, g) in self.finger_groups.iter().enumerate() {
            for (j, r) in g.robots.iter().enumerate() {
                robot_in(g.room, r, format!("finger_groups[{i}].robots[{j}]"))?;
            }
        }
        let mut widget_ids = BTreeSet::new();
        for (i, w) in self.widgets.iter().enumerate() {
            if !widget_ids.insert(w.spec.id.as_str()) {
                return Err(ConfigError::new(format!("widgets[{i}].id"), "duplicate widget id"));
            }
            w.spec
                .validate()
                .map_err(|e| ConfigError::new(format!("widgets[{i}]"), e.to_string()))?;
            for r in w.spec.bound_robots() {
                robot_in(w.room, r, format!("widgets[{i}]"))?;
            }
        }
        let s = &self.scripts;
        for (i, m) in s.manual.iter().enumerate() {
            robot_in(m.room, &m.robot, format!("scripts.manual[{i}].robot"))?;
            check_times(
                m.waypoints.iter().map(|w| w.t),
                &format!("scripts.manual[{i}].waypoints"),
            )?;
        }
        for (i, v) in s.virtual_objects.iter().enumerate() {
            check_times(
                v.waypoints.iter().map(|w| w.t),
                &format!("scripts.virtual_objects[{i}].waypoints"),
            )?;
        }
        for (i, h) in s.hands.iter().enumerate() {
            check_times(h.frames.iter().map(|f| f.t), &format!("scripts.hands[{i}].frames"))?;
        }
        for (i, k) in s.skeletons.iter().enumerate() {
            if !(k.scale > 0.0) {
                return Err(ConfigError::new(
                    format!("scripts.skeletons[{i}].scale"),
                    "must be positive",
                ));
            }
            check_times(
                k.waypoints.iter().map(|w| w.t),
                &format!("scripts.skeletons[{i}].waypoints"),
            )?;
        }
        for (i, w) in s.widget_sets.iter().enumerate() {
            if !widget_ids.contains(w.widget.as_str()) {
                return Err(ConfigError::new(
                    format!("scripts.widget_sets[{i}].widget"),
                    format!("no widget {:?}", w.widget),
                ));
            }
        }
        for (i, p) in s.pens.iter().enumerate() {
            robot_in(p.room, &p.robot, format!("scripts.pens[{i}].robot"))?;
        }
        for (i, c) in s.bind_ctl.iter().enumerate() {
            let target = c.from.other();
            if !self
                .bindings
                .iter()
                .any(|b| b.room == target && b.binding.id == c.binding)
            {
                return Err(ConfigError::new(
                    format!("scripts.bind_ctl[{i}].binding"),
                    format!("no binding {:?} in the {} room", c.binding, target.name()),
                ));
            }
        }
        for (i, t) in self.triggers.iter().enumerate() {
            robot_in(t.room, &t.robot, format!("triggers[{i}].robot"))?;
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return Err(ConfigError::new(
                    format!("metrics[{i}]"),
                    format!("unknown metric {m:?}"),
                ));
            }
        }
        Ok(())
    }
}

fn check_times(times: impl Iterator<Item = f64>, path: &str) -> Result<(), ConfigError> {
    let mut prev = f64::NEG_INFINITY;
    let mut any = false;
    for t in times {
        if !(t.is_finite() && t >= prev) {
            return Err(ConfigError::new(
                path,
                "waypoint times must be finite and non-decreasing",
            ));
        }
        prev = t;
        any = true;
    }
    if !any {
        return Err(ConfigError::new(path, "needs at least one waypoint"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario_is_valid() {
        assert!(ScenarioSpec::empty("e", 1.0).validate().is_ok());
    }

    #[test]
    fn unresolved_reference_reports_path() {
        let mut s = ScenarioSpec::empty("e", 1.0);
        s.rooms.local.robots.push(RobotConfig {
            id: "r1".into(),
            pose: Pose2D::new(10.0, 10.0, 0.0),
            spec: None,
        });
        s.bindings.push(BindingConfig {
            room: Side::Local,
            binding: Binding::new("b", BindingMode::Mirror, "ghost", "r1"),
        });
        let err = s.validate().unwrap_err();
        assert_eq!(err.path, "bindings[0].source_key");
    }

    #[test]
    fn overrides_apply() {
        let s = ScenarioSpec::empty("e", 1.0).with_overrides(&Overrides {
            seed: Some(9),
            latency_ms: Some(100.0),
            duration_s: Some(3.0),
            ..Overrides::default()
        });
        assert_eq!((s.seed, s.link.one_way_latency_ms, s.duration_s), (9, 100.0, 3.0));
    }

    #[test]
    fn parses_minimal_json() {
        let s = ScenarioSpec::from_json(r#"{"id":"x","duration_s":2}"#).unwrap();
        assert_eq!(s.rooms.local.mats.len(), 1);
        assert_eq!(s.dt_s, 0.005);
        let err = ScenarioSpec::from_json(r#"{"id":"x","duration_s":0}"#).unwrap_err();
        assert_eq!(err.path, "duration_s");
    }
}
