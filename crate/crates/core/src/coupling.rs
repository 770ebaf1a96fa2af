//! Turns replicated input streams into per-robot goals.
//!
//! Sources arrive in the remote (avatar) frame and are mapped into the local
//! mat through the calibration transform before becoming goals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Pose2D, Transform2D};
use crate::robot::{GoalSpec, RobotState, MINIATURE_BODY_TOLERANCE_CM};
use crate::sim::RobotObservation;

/// Silence after which a held source is dropped.
pub const SOURCE_DROPOUT_S: f64 = 1.0;
pub const DEFAULT_MINIATURE_JOINT: &str = "pelvis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Index,
    Pinky,
}

impl Finger {
    /// Binding order when there are fewer robots than fingers.
    pub const PRIORITY: [Finger; 3] = [Finger::Index, Finger::Thumb, Finger::Pinky];

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Pinky => "pinky",
        }
    }

    pub fn from_name(name: &str) -> Option<Finger> {
        match name {
            "thumb" => Some(Finger::Thumb),
            "index" => Some(Finger::Index),
            "pinky" => Some(Finger::Pinky),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingMode {
    Mirror,
    VirtualGrasp,
    FingerFollow,
    MiniatureBody,
    HapticTouch,
}

/// Disc on the local mat where a participant has agreed to be touched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchZone {
    pub center: Point,
    pub radius: f64,
}

impl TouchZone {
    pub fn project(&self, p: Point) -> Point {
        let d = p - self.center;
        let n = d.norm();
        if n <= self.radius {
            p
        } else {
            self.center + d * (self.radius / n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub id: String,
    pub mode: BindingMode,
    /// Remote robot id, virtual object id, `finger` or `hand/finger`,
    /// skeleton id, or avatar hand id, depending on `mode`.
    pub source_key: String,
    pub target_robot_id: String,
    #[serde(default)]
    pub tolerance_override: Option<f64>,
    #[serde(default = "default_true")]
    pub active: bool,
    #[serde(default)]
    pub priority: i32,
    #[serde(default)]
    pub touch_zone: Option<TouchZone>,
}

fn default_true() -> bool {
    true
}

impl Binding {
    pub fn new(
        id: impl Into<String>,
        mode: BindingMode,
        source_key: impl Into<String>,
        target_robot_id: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            mode,
            source_key: source_key.into(),
            target_robot_id: target_robot_id.into(),
            tolerance_override: (mode == BindingMode::MiniatureBody).then_some(MINIATURE_BODY_TOLERANCE_CM),
            active: true,
            priority: 0,
            touch_zone: None,
        }
    }

    /// Tolerance for goals produced by this binding.
    pub fn tolerance(&self, default: f64) -> f64 {
        match (self.mode, self.tolerance_override) {
            (_, Some(t)) => t,
            (BindingMode::MiniatureBody, None) => MINIATURE_BODY_TOLERANCE_CM,
            _ => default,
        }
    }
}

/// Checks the one-active-binding-per-robot rule and per-mode requirements.
pub fn validate_bindings(bindings: &[Binding]) -> Result<(), String> {
    let mut ids = BTreeSet::new();
    let mut active_targets = BTreeMap::new();
    for b in bindings {
        if !ids.insert(&b.id) {
            return Err(format!("duplicate binding id {:?}", b.id));
        }
        if b.mode == BindingMode::MiniatureBody
            && b.tolerance_override.is_some_and(|t| t != MINIATURE_BODY_TOLERANCE_CM)
        {
            return Err(format!(
                "miniature_body binding {:?} must use tolerance {MINIATURE_BODY_TOLERANCE_CM} cm",
                b.id
            ));
        }
        if b.mode == BindingMode::HapticTouch && b.touch_zone.is_none() {
            return Err(format!("haptic_touch binding {:?} needs a touch_zone", b.id));
        }
        if let Some(t) = b.tolerance_override {
            if !(t > 0.0) {
                return Err(format!("binding {:?} tolerance must be positive", b.id));
            }
        }
        if b.active {
            if let Some(other) = active_targets.insert(&b.target_robot_id, &b.id) {
                return Err(format!(
                    "robot {:?} has two active bindings ({other:?}, {:?})",
                    b.target_robot_id, b.id
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "state", content = "object", rename_all = "snake_case")]
pub enum GrabState {
    #[default]
    Open,
    Pinching(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandPose {
    pub timestamp: f64,
    pub fingers: BTreeMap<Finger, Point>,
    #[serde(default)]
    pub grab_state: GrabState,
}

impl HandPose {
    /// Point used for touching: the index tip, else the mean of present fingers.
    pub fn contact_point(&self) -> Option<Point> {
        if let Some(p) = self.fingers.get(&Finger::Index) {
            return Some(*p);
        }
        if self.fingers.is_empty() {
            return None;
        }
        let sum = self.fingers.values().fold(Point::default(), |acc, p| acc + *p);
        Some(sum * (1.0 / self.fingers.len() as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySkeleton {
    pub timestamp: f64,
    pub joints: BTreeMap<String, Point>,
    pub world_to_miniature_scale: f64,
}

/// Latest value of every input stream, in the remote frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingInputs {
    pub remote_robots: BTreeMap<String, Pose2D>,
    pub hands: BTreeMap<String, HandPose>,
    pub skeletons: BTreeMap<String, BodySkeleton>,
    pub virtual_objects: BTreeMap<String, Pose2D>,
}

/// Binds fingers to robots: fingers by [`Finger::PRIORITY`], robots ascending.
pub fn assign_fingers(fingers_present: &BTreeSet<Finger>, robots_available: &[String]) -> BTreeMap<Finger, String> {
    let mut robots: Vec<&String> = robots_available.iter().collect();
    robots.sort();
    robots.dedup();
    Finger::PRIORITY
        .iter()
        .filter(|f| fingers_present.contains(f))
        .zip(robots)
        .map(|(f, r)| (*f, r.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGoal {
    pub binding_id: String,
    pub robot_id: String,
    pub goal: GoalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CouplingEvent {
    /// The binding's source stayed silent past the dropout window.
    UnresolvedSource { binding_id: String, source_key: String },
}

#[derive(Debug, Clone, Default)]
struct SourceMemory {
    last_target: Option<Point>,
    last_seen: f64,
}

/// Stateful goal generator: remembers the last resolved target of every
/// binding so brief tracking gaps hold the previous goal.
#[derive(Debug, Clone)]
pub struct Coupler {
    pub calibration: Transform2D,
    pub miniature_joint: String,
    pub dropout_s: f64,
    memory: BTreeMap<String, SourceMemory>,
}

impl Default for Coupler {
    fn default() -> Self {
        Self::new(Transform2D::IDENTITY)
    }
}

impl Coupler {
    pub fn new(calibration: Transform2D) -> Self {
        Self {
            calibration,
            miniature_joint: DEFAULT_MINIATURE_JOINT.into(),
            dropout_s: SOURCE_DROPOUT_S,
            memory: BTreeMap::new(),
        }
    }

    /// Forgets what a binding last saw, e.g. after it is reactivated.
    pub fn reset(&mut self, binding_id: &str) {
        self.memory.remove(binding_id);
    }

    fn resolve(&self, b: &Binding, inputs: &CouplingInputs) -> Option<Point> {
        let cal = &self.calibration;
        match b.mode {
            BindingMode::Mirror => inputs.remote_robots.get(&b.source_key).map(|p| cal.apply(p.position())),
            BindingMode::VirtualGrasp => inputs
                .virtual_objects
                .get(&b.source_key)
                .map(|p| cal.apply(p.position())),
            BindingMode::FingerFollow => {
                let (hand, finger) = match b.source_key.split_once('/') {
                    Some((h, f)) => (Some(h), f),
                    None => (None, b.source_key.as_str()),
                };
                let finger = Finger::from_name(finger)?;
                let found = match hand {
                    Some(h) => inputs.hands.get(h).and_then(|hp| hp.fingers.get(&finger)),
                    None => inputs.hands.values().find_map(|hp| hp.fingers.get(&finger)),
                };
                found.map(|p| cal.apply(*p))
            }
            BindingMode::MiniatureBody => {
                let sk = inputs.skeletons.get(&b.source_key)?;
                let joint = sk.joints.get(&self.miniature_joint)?;
                Some(cal.apply(*joint * sk.world_to_miniature_scale))
            }
            BindingMode::HapticTouch => {
                let hand = inputs.hands.get(&b.source_key)?;
                let contact = cal.apply(hand.contact_point()?);
                Some(match b.touch_zone {
                    Some(zone) => zone.project(contact),
                    None => contact,
                })
            }
        }
    }

    /// One candidate goal per active, resolvable binding.
    ///
    /// A binding whose source is missing keeps its last goal; after
    /// `dropout_s` of silence it is deactivated and an event is returned.
    /// Sources never seen yet produce no goal and do not time out.
    pub fn compute_goals(
        &mut self,
        bindings: &mut [Binding],
        inputs: &CouplingInputs,
        now: f64,
        default_tolerance: f64,
    ) -> (Vec<CandidateGoal>, Vec<CouplingEvent>) {
        let mut goals = Vec::new();
        let mut events = Vec::new();
        for b in bindings.iter_mut().filter(|b| b.active) {
            let resolved = self.resolve(b, inputs);
            let mem = self.memory.entry(b.id.clone()).or_insert_with(|| SourceMemory {
                last_target: None,
                last_seen: now,
            });
            let target = match resolved {
                Some(p) => {
                    mem.last_target = Some(p);
                    mem.last_seen = now;
                    Some(p)
                }
                None if mem.last_target.is_some() && now - mem.last_seen > self.dropout_s => {
                    b.active = false;
                    self.memory.remove(&b.id);
                    events.push(CouplingEvent::UnresolvedSource {
                        binding_id: b.id.clone(),
                        source_key: b.source_key.clone(),
                    });
                    None
                }
                None => mem.last_target,
            };
            if let Some(target) = target {
                goals.push(CandidateGoal {
                    binding_id: b.id.clone(),
                    robot_id: b.target_robot_id.clone(),
                    goal: GoalSpec {
                        target,
                        target_heading: None,
                        tolerance: b.tolerance(default_tolerance),
                        priority: b.priority,
                    },
                });
            }
        }
        (goals, events)
    }
}

/// At most one goal per robot. Robots held by a local person get none.
/// Highest priority wins; ties go to the lowest binding id.
pub fn resolve_conflicts(candidates: &[CandidateGoal], robot_states: &[RobotState]) -> BTreeMap<String, GoalSpec> {
    let grabbed: BTreeSet<&str> = robot_states
        .iter()
        .filter(|r| r.grabbed_by_local)
        .map(|r| r.id.as_str())
        .collect();
    let mut best: BTreeMap<String, &CandidateGoal> = BTreeMap::new();
    for c in candidates.iter().filter(|c| !grabbed.contains(c.robot_id.as_str())) {
        match best.get(&c.robot_id) {
            Some(cur)
                if (cur.goal.priority, std::cmp::Reverse(&cur.binding_id))
                    >= (c.goal.priority, std::cmp::Reverse(&c.binding_id)) => {}
            _ => {
                best.insert(c.robot_id.clone(), c);
            }
        }
    }
    best.into_iter().map(|(k, c)| (k, c.goal)).collect()
}

/// Whether recent reports show motion the robot's own commands cannot explain.
///
/// Looks at the last three observations; a jump exceeding the commanded
/// travel by more than `2 * tolerance` within one interval counts as a grab.
pub fn detect_manual_grab(history: &[RobotObservation], tolerance: f64) -> bool {
    if history.len() < 3 {
        return false;
    }
    history[history.len() - 3..].windows(2).any(|w| {
        let dt = (w[1].t - w[0].t).max(0.0);
        let moved = w[1].pose.position().distance(w[0].pose.position());
        let commanded = w[0].velocity.v.abs() * dt;
        moved - commanded > 2.0 * tolerance
    })
}

pub fn detect_manual_grabs(
    histories: &BTreeMap<String, Vec<RobotObservation>>,
    tolerance: f64,
) -> BTreeMap<String, bool> {
    histories
        .iter()
        .map(|(id, h)| (id.clone(), detect_manual_grab(h, tolerance)))
        .collect()
}
