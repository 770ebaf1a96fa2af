//! Fixed-timestep tabletop world: robots, pushable objects, attachments,
//! mechanical constraints and the position sensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MatFrame, Orientation, Point, Pose2D};
use crate::robot::{step_kinematics, KinematicsError, MotorCommand, RobotSpec, RobotState};

/// Largest world timestep accepted by [`World::step_world`].
pub const MAX_WORLD_DT_S: f64 = 0.02;
pub const DEFAULT_DT_S: f64 = 0.005;
pub const DEFAULT_SENSOR_QUANTUM_CM: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown robot {0:?}")]
    UnknownRobot(String),
    #[error("world timestep {0} s outside (0, {MAX_WORLD_DT_S}]")]
    InvalidTimestep(f64),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Furniture,
    Toy,
    Token,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveObject {
    pub id: String,
    pub pose: Pose2D,
    pub mass_g: f64,
    pub footprint_radius: f64,
    #[serde(default)]
    pub kind: ObjectKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttachmentKind {
    ShapeProp {
        #[serde(default)]
        name: String,
    },
    MaterialProp {
        #[serde(default)]
        name: String,
    },
    Pen {
        #[serde(default = "default_pen_color")]
        color: String,
        #[serde(default)]
        down: bool,
    },
    Magnet,
    PostIt {
        #[serde(default)]
        text: String,
    },
}

fn default_pen_color() -> String {
    "black".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub robot_id: String,
    #[serde(flatten)]
    pub kind: AttachmentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintGeometry {
    LineSegment { a: Point, b: Point },
    RingBoundary { center: Point, radius: f64 },
    RingRegion { center: Point, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    #[serde(flatten)]
    pub geometry: ConstraintGeometry,
    pub subject_robot_ids: Vec<String>,
}

/// Nearest point of the constraint set; heading is kept.
pub fn apply_constraint(pose: Pose2D, c: &ConstraintGeometry) -> Pose2D {
    let p = pose.position();
    let q = match *c {
        ConstraintGeometry::LineSegment { a, b } => {
            let ab = b - a;
            let len2 = ab.dot(ab);
            if len2 == 0.0 {
                a
            } else {
                let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
                a + ab * t
            }
        }
        ConstraintGeometry::RingBoundary { center, radius } => {
            let d = p - center;
            let n = d.norm();
            if n == 0.0 {
                center + Point::new(radius, 0.0)
            } else {
                center + d * (radius / n)
            }
        }
        ConstraintGeometry::RingRegion { center, radius } => {
            let d = p - center;
            let n = d.norm();
            if n <= radius {
                p
            } else {
                center + d * (radius / n)
            }
        }
    };
    pose.with_position(q)
}

/// Distance from a point to the constraint set.
pub fn constraint_distance(p: Point, c: &ConstraintGeometry) -> f64 {
    apply_constraint(Pose2D::new(p.x, p.y, 0.0), c).position().distance(p)
}

/// Quasi-static contact between a moving robot and a passive object.
///
/// Returns the robot and object poses after contact. Objects within the
/// push capacity are slid along the contact normal until the footprints just
/// touch; heavier objects stop the robot at first contact.
pub fn resolve_push(
    robot_from: Pose2D,
    robot_to: Pose2D,
    robot_radius: f64,
    push_capacity_g: f64,
    object: &PassiveObject,
) -> (Pose2D, Pose2D) {
    let contact = robot_radius + object.footprint_radius;
    let obj = object.pose.position();
    let to = robot_to.position();
    let gap = obj - to;
    let dist = gap.norm();
    if dist >= contact {
        return (robot_to, object.pose);
    }
    let motion = to - robot_from.position();
    let normal = if dist > 0.0 {
        gap * (1.0 / dist)
    } else {
        let m = motion.norm();
        if m == 0.0 {
            return (robot_to, object.pose);
        }
        motion * (1.0 / m)
    };
    if motion.dot(normal) <= 0.0 {
        // Not driving into the object.
        return (robot_to, object.pose);
    }
    if object.mass_g <= push_capacity_g {
        let moved = to + normal * contact;
        return (robot_to, object.pose.with_position(moved));
    }
    // Stall at first contact: smallest s in [0,1] with |from + s*m - obj| = contact.
    let from = robot_from.position();
    let f = from - obj;
    let a = motion.dot(motion);
    let b = 2.0 * f.dot(motion);
    let c = f.dot(f) - contact * contact;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let s = ((-b - disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
    let stalled = from + motion * s;
    (robot_to.with_position(stalled), object.pose)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRobot {
    pub state: RobotState,
    #[serde(default)]
    pub spec: RobotSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotObservation {
    pub robot_id: String,
    pub pose: Pose2D,
    pub velocity: MotorCommand,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Position quantum in cm; 0 reports exact positions.
    pub quantum_cm: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            quantum_cm: DEFAULT_SENSOR_QUANTUM_CM,
        }
    }
}

pub fn quantize(value: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (value / quantum).round() * quantum
    } else {
        value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSnapshot {
    pub id: String,
    pub pose: Pose2D,
    pub v: f64,
    pub omega: f64,
    pub grabbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    pub id: String,
    pub pose: Pose2D,
}

/// Immutable view of a world at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub t: f64,
    pub robots: Vec<RobotSnapshot>,
    pub objects: Vec<ObjectSnapshot>,
    /// Total points per robot across all pen traces.
    pub pen_points: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub mats: Vec<MatFrame>,
    robots: Vec<SimRobot>,
    pub objects: Vec<PassiveObject>,
    pub attachments: Vec<Attachment>,
    pub constraints: Vec<Constraint>,
    /// Polylines drawn by pen attachments, keyed by robot id.
    pub pen_traces: BTreeMap<String, Vec<Vec<Point>>>,
    pub sensor: SensorConfig,
    /// Slip down vertical mats, cm/s.
    pub vertical_slip: f64,
    pub rng_seed: u64,
    clock_us: u64,
    last_report_us: BTreeMap<String, u64>,
}

impl World {
    pub fn new(mats: Vec<MatFrame>) -> Self {
        Self {
            mats,
            robots: Vec::new(),
            objects: Vec::new(),
            attachments: Vec::new(),
            constraints: Vec::new(),
            pen_traces: BTreeMap::new(),
            sensor: SensorConfig::default(),
            vertical_slip: 0.0,
            rng_seed: 0,
            clock_us: 0,
            last_report_us: BTreeMap::new(),
        }
    }

    /// A single default mat at the origin.
    pub fn single_mat() -> Self {
        Self::new(vec![MatFrame::new("mat0")])
    }

    /// Adds a robot, keeping robots ordered by id.
    pub fn add_robot(&mut self, state: RobotState, spec: RobotSpec) {
        let idx = self.robots.partition_point(|r| r.state.id < state.id);
        self.robots.insert(idx, SimRobot { state, spec });
    }

    pub fn robots(&self) -> &[SimRobot] {
        &self.robots
    }

    pub fn robot(&self, id: &str) -> Option<&SimRobot> {
        self.robot_index(id).map(|i| &self.robots[i])
    }

    fn robot_index(&self, id: &str) -> Option<usize> {
        self.robots.binary_search_by(|r| r.state.id.as_str().cmp(id)).ok()
    }

    pub fn clock(&self) -> f64 {
        self.clock_us as f64 / 1e6
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidWorld(m));
        if self.mats.is_empty() {
            return bad("world has no mats".into());
        }
        crate::geometry::validate_tiling(&self.mats).map_err(|e| SimError::InvalidWorld(e.to_string()))?;
        for w in self.robots.windows(2) {
            if w[0].state.id == w[1].state.id {
                return bad(format!("duplicate robot id {:?}", w[0].state.id));
            }
        }
        for r in &self.robots {
            r.spec
                .validate()
                .map_err(|e| SimError::InvalidWorld(format!("robot {:?}: {e}", r.state.id)))?;
            let p = r.state.pose.position();
            let Some(mat) = self.mat_at(p) else {
                return bad(format!("robot {:?} at ({}, {}) is off every mat", r.state.id, p.x, p.y));
            };
            if mat.orientation_mode == Orientation::Vertical && !self.has_magnet(&r.state.id) {
                return bad(format!(
                    "robot {:?} is on vertical mat {:?} without a magnet",
                    r.state.id, mat.id
                ));
            }
        }
        for o in &self.objects {
            if !(o.mass_g > 0.0 && o.footprint_radius > 0.0) {
                return bad(format!("object {:?} needs positive mass and radius", o.id));
            }
            if self.mat_at(o.pose.position()).is_none() {
                return bad(format!("object {:?} is off every mat", o.id));
            }
        }
        for a in &self.attachments {
            if self.robot_index(&a.robot_id).is_none() {
                return bad(format!("attachment on unknown robot {:?}", a.robot_id));
            }
        }
        for c in &self.constraints {
            for id in &c.subject_robot_ids {
                if self.robot_index(id).is_none() {
                    return bad(format!("constraint {:?} names unknown robot {id:?}", c.id));
                }
            }
        }
        Ok(())
    }

    pub fn mat_at(&self, p: Point) -> Option<&MatFrame> {
        self.mats.iter().find(|m| m.contains(p))
    }

    fn has_magnet(&self, robot_id: &str) -> bool {
        self.attachments
            .iter()
            .any(|a| a.robot_id == robot_id && a.kind == AttachmentKind::Magnet)
    }

    fn contain(&self, p: Point) -> Point {
        if self.mat_at(p).is_some() {
            return p;
        }
        self.mats
            .iter()
            .map(|m| m.clamp(p))
            .min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
            .unwrap_or(p)
    }

    /// A local person picks up the robot and places it at `pose`.
    pub fn set_manual_pose(&mut self, robot_id: &str, pose: Pose2D) -> Result<(), SimError> {
        let idx = self
            .robot_index(robot_id)
            .ok_or_else(|| SimError::UnknownRobot(robot_id.to_string()))?;
        let contained = self.contain(pose.position());
        let r = &mut self.robots[idx].state;
        r.pose = pose.with_position(contained);
        r.velocity = MotorCommand::STOP;
        r.grabbed_by_local = true;
        Ok(())
    }

    pub fn release(&mut self, robot_id: &str) -> Result<(), SimError> {
        let idx = self
            .robot_index(robot_id)
            .ok_or_else(|| SimError::UnknownRobot(robot_id.to_string()))?;
        self.robots[idx].state.grabbed_by_local = false;
        Ok(())
    }

    /// Raises or lowers the pen carried by `robot_id`, if any.
    pub fn set_pen(&mut self, robot_id: &str, down: bool) -> Result<(), SimError> {
        let idx = self
            .robot_index(robot_id)
            .ok_or_else(|| SimError::UnknownRobot(robot_id.to_string()))?;
        let pos = self.robots[idx].state.pose.position();
        for a in self.attachments.iter_mut().filter(|a| a.robot_id == robot_id) {
            if let AttachmentKind::Pen { down: d, .. } = &mut a.kind {
                if down && !*d {
                    self.pen_traces.entry(robot_id.to_string()).or_default().push(vec![pos]);
                }
                *d = down;
            }
        }
        Ok(())
    }

    fn pen_down(&self, robot_id: &str) -> bool {
        self.attachments
            .iter()
            .any(|a| a.robot_id == robot_id && matches!(a.kind, AttachmentKind::Pen { down: true, .. }))
    }

    /// Advances the world by `dt` seconds under `commands`.
    ///
    /// Robots without a command are stopped; grabbed robots ignore commands.
    pub fn step_world(&mut self, commands: &BTreeMap<String, MotorCommand>, dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0 && dt <= MAX_WORLD_DT_S) {
            return Err(SimError::InvalidTimestep(dt));
        }
        if let Some(id) = commands.keys().find(|id| self.robot_index(id).is_none()) {
            return Err(SimError::UnknownRobot(id.clone()));
        }
        let dt_us = (dt * 1e6).round() as u64;
        let dt = dt_us as f64 / 1e6;

        for i in 0..self.robots.len() {
            let id = self.robots[i].state.id.clone();
            if self.robots[i].state.grabbed_by_local {
                self.robots[i].state.velocity = MotorCommand::STOP;
                continue;
            }
            let cmd = commands.get(&id).copied().unwrap_or(MotorCommand::STOP);
            let spec = self.robots[i].spec;
            let before = self.robots[i].state.pose;
            let mut next = step_kinematics(&self.robots[i].state, cmd, dt, &spec)?;

            if self.vertical_slip > 0.0 {
                if let Some(mat) = self.mat_at(before.position()) {
                    if mat.orientation_mode == Orientation::Vertical {
                        let down = mat
                            .origin_in_world
                            .apply_vector(Point::new(0.0, self.vertical_slip * dt));
                        next.pose = next.pose.with_position(next.pose.position() + down);
                    }
                }
            }
            next.pose = self.constrain(&id, next.pose);

            for obj in self.objects.iter_mut() {
                let (robot_pose, obj_pose) =
                    resolve_push(before, next.pose, spec.contact_radius(), spec.push_capacity_g, obj);
                next.pose = robot_pose;
                obj.pose = obj_pose;
            }
            self.robots[i].state = next;
        }

        self.separate_robots();

        for i in 0..self.robots.len() {
            let p = self.contain(self.robots[i].state.pose.position());
            let id = self.robots[i].state.id.clone();
            let pose = self.constrain(&id, self.robots[i].state.pose.with_position(p));
            self.robots[i].state.pose = pose;
        }
        for i in 0..self.objects.len() {
            let p = self.contain(self.objects[i].pose.position());
            self.objects[i].pose = self.objects[i].pose.with_position(p);
        }

        for i in 0..self.robots.len() {
            let id = &self.robots[i].state.id;
            if self.pen_down(id) {
                let pos = self.robots[i].state.pose.position();
                let traces = self.pen_traces.entry(id.clone()).or_default();
                match traces.last_mut() {
                    Some(line) => line.push(pos),
                    None => traces.push(vec![pos]),
                }
            }
        }

        self.clock_us += dt_us;
        Ok(())
    }

    fn constrain(&self, robot_id: &str, mut pose: Pose2D) -> Pose2D {
        for c in &self.constraints {
            if c.subject_robot_ids.iter().any(|s| s == robot_id) {
                pose = apply_constraint(pose, &c.geometry);
            }
        }
        pose
    }

    /// Pushes overlapping robots apart along their centre line. A grabbed
    /// robot is held in place and the other takes the whole correction.
    fn separate_robots(&mut self) {
        let n = self.robots.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&self.robots[i], &self.robots[j]);
                let min_dist = a.spec.contact_radius() + b.spec.contact_radius();
                let d = b.state.pose.position() - a.state.pose.position();
                let dist = d.norm();
                if dist >= min_dist {
                    continue;
                }
                let dir = if dist > 0.0 {
                    d * (1.0 / dist)
                } else {
                    Point::new(1.0, 0.0)
                };
                let overlap = min_dist - dist;
                let (wa, wb) = match (a.state.grabbed_by_local, b.state.grabbed_by_local) {
                    (true, true) => continue,
                    (true, false) => (0.0, 1.0),
                    (false, true) => (1.0, 0.0),
                    (false, false) => (0.5, 0.5),
                };
                let pa = self.robots[i].state.pose.position() - dir * (overlap * wa);
                let pb = self.robots[j].state.pose.position() + dir * (overlap * wb);
                self.robots[i].state.pose = self.robots[i].state.pose.with_position(pa);
                self.robots[j].state.pose = self.robots[j].state.pose.with_position(pb);
            }
        }
    }

    /// Position reports for robots whose report period has elapsed.
    pub fn sample_sensors(&mut self) -> Vec<RobotObservation> {
        let now = self.clock_us;
        let t = self.clock();
        let q = self.sensor.quantum_cm;
        let mut out = Vec::new();
        for r in &self.robots {
            let period_us = (r.spec.report_period_s * 1e6).round() as u64;
            let due = match self.last_report_us.get(&r.state.id) {
                None => true,
                Some(&last) => now >= last + period_us,
            };
            if !due {
                continue;
            }
            self.last_report_us.insert(r.state.id.clone(), now);
            let p = r.state.pose;
            out.push(RobotObservation {
                robot_id: r.state.id.clone(),
                pose: Pose2D::new(quantize(p.x, q), quantize(p.y, q), p.theta),
                velocity: r.state.velocity,
                t,
            });
        }
        out
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            t: self.clock(),
            robots: self
                .robots
                .iter()
                .map(|r| RobotSnapshot {
                    id: r.state.id.clone(),
                    pose: r.state.pose,
                    v: r.state.velocity.v,
                    omega: r.state.velocity.omega,
                    grabbed: r.state.grabbed_by_local,
                })
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectSnapshot {
                    id: o.id.clone(),
                    pose: o.pose,
                })
                .collect(),
            pen_points: self
                .pen_traces
                .iter()
                .map(|(id, lines)| (id.clone(), lines.iter().map(Vec::len).sum()))
                .collect(),
        }
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}
