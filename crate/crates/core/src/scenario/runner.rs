//! Two-peer simulation loop.
//!
//! Each tick the remote peer runs first, then the local one. A peer applies
//! scripted manual moves, samples its sensors, emits its input streams,
//! drains the inbound link into its replica, computes goals and commands,
//! and finally steps its world.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::batch::{map_items, ExecMode, PARALLEL_ROBOT_THRESHOLD};
use crate::coupling::{
    assign_fingers, detect_manual_grab, resolve_conflicts, Binding, BodySkeleton, CandidateGoal, Coupler,
    CouplingEvent, CouplingInputs, Finger, GrabState, HandPose,
};
use crate::geometry::{Point, Pose2D, Transform2D};
use crate::net::bridge::{BridgeMessage, LinkParams};
use crate::net::codec::{from_centi, from_micro, from_millideg, to_centi, to_micro, to_millideg, WirePoint, WirePose};
use crate::net::udp::Transport;
use crate::net::{decode, encode, Applied, LinkStats, Message, MsgType, Payload, ReplicaStore, SimLink};
use crate::robot::{goto_controller, GoalSpec, MotorCommand, RobotSpec, RobotState};
use crate::sim::{RobotObservation, SimError, World, WorldSnapshot};
use crate::widgets::Params;

use super::log::{
    parse_log, LogRecord, LogWriter, LoggedGoal, MsgEvent, RoomTick, RunEvent, TickSnapshot, LOG_FORMAT, LOG_VERSION,
};
use super::metrics::{compute_metrics, RunMetrics};
use super::script::{hand_at, point_at, pose_at};
use super::spec::{ConfigError, FingerGroup, Overrides, ScenarioSpec, Side, WidgetConfig};

/// Inputs not refreshed for this long are treated as missing.
pub const INPUT_STALE_US: u64 = 250_000;
/// Hand, body and proxy streams: 60 Hz.
pub const STREAM_PERIOD_US: u64 = 16_667;
pub const WIDGET_MIN_INTERVAL_US: u64 = 10_000;
pub const HEARTBEAT_US: u64 = 100_000;
pub const CALIBRATION_PERIOD_US: u64 = 1_000_000;
pub const POINTER_HAND_ID: &str = "pointer";
const GRAB_HISTORY: usize = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: String,
    pub metrics: RunMetrics,
    pub snapshots: Vec<TickSnapshot>,
}

/// Operator input arriving from outside the scripted run.
#[derive(Debug, Clone, PartialEq)]
pub enum Injection {
    LinkParams(LinkParams),
    /// Stands in for the remote user's index finger.
    Pointer {
        x: f64,
        y: f64,
        pressed: bool,
        target: Option<String>,
    },
    /// A wire message sent as if by the remote peer.
    Remote(Payload),
}

fn us(t: f64) -> u64 {
    (t.max(0.0) * 1e6).round() as u64
}

#[derive(Debug, Clone, Copy)]
struct Cadence {
    min_interval_us: u64,
    heartbeat_us: u64,
}

const STREAM: Cadence = Cadence {
    min_interval_us: STREAM_PERIOD_US,
    heartbeat_us: STREAM_PERIOD_US,
};
const WIDGET: Cadence = Cadence {
    min_interval_us: WIDGET_MIN_INTERVAL_US,
    heartbeat_us: HEARTBEAT_US,
};
const STATE: Cadence = Cadence {
    min_interval_us: 0,
    heartbeat_us: HEARTBEAT_US,
};

#[derive(Debug, Clone)]
struct StreamState {
    last_sent: Option<Payload>,
    last_sent_us: u64,
    prev_value: Option<Payload>,
    was_resting: bool,
}

impl Default for StreamState {
    fn default() -> Self {
        Self {
            last_sent: None,
            last_sent_us: 0,
            prev_value: None,
            was_resting: true,
        }
    }
}

#[derive(Debug, Clone)]
struct WidgetRuntime {
    cfg: WidgetConfig,
    has_robots: bool,
    params: Params,
    changed_at_us: u64,
    /// This peer made the latest change and keeps it alive.
    owner: bool,
}

#[derive(Debug)]
struct Outgoing {
    seq: u32,
    timestamp_us: u64,
    payload: Payload,
}

#[derive(Debug)]
struct PeerTick {
    records: Vec<LogRecord>,
    outbox: Vec<Outgoing>,
    snapshot: WorldSnapshot,
    goals: BTreeMap<String, GoalSpec>,
    commands: BTreeMap<String, MotorCommand>,
}

#[derive(Debug)]
struct Peer {
    side: Side,
    world: World,
    bindings: Vec<Binding>,
    coupler: Coupler,
    finger_groups: Vec<FingerGroup>,
    widgets: Vec<WidgetRuntime>,
    replica: ReplicaStore,
    inputs: CouplingInputs,
    input_seen: BTreeMap<(MsgType, String), u64>,
    seq: BTreeMap<(MsgType, String), u32>,
    streams: BTreeMap<(MsgType, String), StreamState>,
    histories: BTreeMap<String, VecDeque<RobotObservation>>,
    grab_detected: BTreeMap<String, bool>,
    observed: BTreeMap<String, Pose2D>,
    prev_grabbed: BTreeMap<String, bool>,
    manual_phase: Vec<u8>,
    pen_fired: Vec<bool>,
    widget_set_fired: Vec<bool>,
    bind_ctl_fired: Vec<bool>,
    bind_ctl_state: BTreeMap<String, bool>,
    pointer: Option<HandPose>,
    injected: Vec<Payload>,
    clock_offset_us: i64,
    default_tolerance: f64,
}

impl Peer {
    fn new(spec: &ScenarioSpec, side: Side, calibration: Transform2D) -> Self {
        let room = spec.rooms.get(side);
        let world = room.build_world(spec.sensor_quantum_cm, spec.seed);
        let widgets = spec
            .widgets
            .iter()
            .map(|w| {
                let home = spec.rooms.get(w.room);
                let poses: BTreeMap<String, Pose2D> = home.robots.iter().map(|r| (r.id.clone(), r.pose)).collect();
                let defaults = w.spec.default_params();
                WidgetRuntime {
                    cfg: w.clone(),
                    has_robots: w.room == side,
                    params: w.spec.read(&poses, &defaults).unwrap_or(defaults),
                    changed_at_us: 0,
                    owner: false,
                }
            })
            .collect();
        let s = &spec.scripts;
        Self {
            side,
            world,
            bindings: spec
                .bindings
                .iter()
                .filter(|b| b.room == side)
                .map(|b| b.binding.clone())
                .collect(),
            coupler: Coupler::new(calibration),
            finger_groups: spec.finger_groups.iter().filter(|g| g.room == side).cloned().collect(),
            widgets,
            replica: ReplicaStore::new(),
            inputs: CouplingInputs::default(),
            input_seen: BTreeMap::new(),
            seq: BTreeMap::new(),
            streams: BTreeMap::new(),
            histories: BTreeMap::new(),
            grab_detected: BTreeMap::new(),
            observed: BTreeMap::new(),
            prev_grabbed: BTreeMap::new(),
            manual_phase: vec![0; s.manual.len()],
            pen_fired: vec![false; s.pens.len()],
            widget_set_fired: vec![false; s.widget_sets.len()],
            bind_ctl_fired: vec![false; s.bind_ctl.len()],
            bind_ctl_state: BTreeMap::new(),
            pointer: None,
            injected: Vec::new(),
            clock_offset_us: room.clock_offset_us,
            default_tolerance: RobotSpec::default().goal_tolerance,
        }
    }

    fn stamp(&self, now_us: u64) -> u64 {
        (now_us as i64 + self.clock_offset_us).max(0) as u64
    }

    fn queue(&mut self, out: &mut Vec<Outgoing>, payload: Payload, timestamp_us: u64) {
        let key = (payload.msg_type(), payload.subject_id().to_string());
        let seq = self.seq.entry(key).or_insert(0);
        *seq += 1;
        out.push(Outgoing {
            seq: *seq,
            timestamp_us,
            payload,
        });
    }

    /// Sends on change (at once after rest, else rate-limited) and on heartbeat.
    fn offer(&mut self, out: &mut Vec<Outgoing>, payload: Payload, now_us: u64, cadence: Cadence, timestamp_us: u64) {
        let key = (payload.msg_type(), payload.subject_id().to_string());
        let st = self.streams.entry(key).or_default();
        let moved = st.prev_value.as_ref() != Some(&payload);
        let onset = moved && st.was_resting;
        let changed = st.last_sent.as_ref() != Some(&payload);
        let since = now_us.saturating_sub(st.last_sent_us);
        let send = st.last_sent.is_none()
            || (changed && (onset || since >= cadence.min_interval_us))
            || since >= cadence.heartbeat_us;
        st.was_resting = !moved;
        st.prev_value = Some(payload.clone());
        if send {
            st.last_sent = Some(payload.clone());
            st.last_sent_us = now_us;
            self.queue(out, payload, timestamp_us);
        }
    }

    fn event(&self, records: &mut Vec<LogRecord>, t: f64, event: RunEvent) {
        records.push(LogRecord::Event {
            t,
            room: self.side,
            event,
        });
    }

    fn tick(&mut self, spec: &ScenarioSpec, now_us: u64, inbound: Vec<Vec<u8>>) -> Result<PeerTick, SimError> {
        let t = now_us as f64 / 1e6;
        let side = self.side;
        let mut records = Vec::new();
        let mut out = Vec::new();
        let stamp = self.stamp(now_us);

        for (i, m) in spec.scripts.manual.iter().enumerate().filter(|(_, m)| m.room == side) {
            let first = us(m.waypoints[0].t);
            let last = us(m.waypoints[m.waypoints.len() - 1].t);
            if now_us >= first && now_us <= last {
                self.world.set_manual_pose(&m.robot, pose_at(&m.waypoints, t))?;
                self.manual_phase[i] = 1;
            } else if now_us > last && self.manual_phase[i] == 1 {
                self.world.release(&m.robot)?;
                self.manual_phase[i] = 2;
            }
        }
        for (i, p) in spec.scripts.pens.iter().enumerate() {
            if p.room == side && !self.pen_fired[i] && now_us >= us(p.t) {
                self.pen_fired[i] = true;
                self.world.set_pen(&p.robot, p.down)?;
            }
        }

        let grabbed: Vec<(String, bool)> = self
            .world
            .robots()
            .iter()
            .map(|r| (r.state.id.clone(), r.state.grabbed_by_local))
            .collect();
        for (id, g) in &grabbed {
            let prev = self.prev_grabbed.insert(id.clone(), *g).unwrap_or(false);
            if prev != *g {
                self.event(
                    &mut records,
                    t,
                    RunEvent::GrabChanged {
                        robot: id.clone(),
                        grabbed: *g,
                    },
                );
                let payload = Payload::GrabEvent {
                    subject_id: id.clone(),
                    grabbed: *g,
                    by_remote: side == Side::Remote,
                };
                self.queue(&mut out, payload, stamp);
            }
        }

        for obs in self.world.sample_sensors() {
            let id = obs.robot_id.clone();
            let tol = self
                .world
                .robot(&id)
                .map(|r| r.spec.goal_tolerance)
                .unwrap_or(self.default_tolerance);
            let grabbed_now = self.world.robot(&id).is_some_and(|r| r.state.grabbed_by_local);
            self.observed.insert(id.clone(), obs.pose);
            let payload = Payload::RobotState {
                robot_id: id.clone(),
                pose: WirePose::from_pose(&obs.pose),
                v: to_centi(obs.velocity.v),
                omega: to_millideg(obs.velocity.omega),
                grabbed: grabbed_now,
            };
            let hist = self.histories.entry(id.clone()).or_default();
            hist.push_back(obs);
            while hist.len() > GRAB_HISTORY {
                hist.pop_front();
            }
            let detected = detect_manual_grab(hist.make_contiguous(), tol);
            let before = self.grab_detected.insert(id.clone(), detected).unwrap_or(false);
            if detected && !before {
                self.event(&mut records, t, RunEvent::ManualGrabDetected { robot: id });
            }
            self.queue(&mut out, payload, stamp);
        }

        self.emit_scripted(spec, now_us, t, &mut records, &mut out);

        for bytes in inbound {
            match decode(&bytes) {
                Err(e) => self.event(&mut records, t, RunEvent::Corrupt { reason: e.to_string() }),
                Ok(msg) => {
                    let applied = self.replica.replica_apply(msg.clone());
                    records.push(LogRecord::Msg {
                        t,
                        from: side.other(),
                        ev: match applied {
                            Applied::Accepted => MsgEvent::Accepted,
                            Applied::Stale => MsgEvent::Stale,
                        },
                        msg_type: msg.msg_type().name().to_string(),
                        subject: msg.payload.subject_id().to_string(),
                        seq: msg.seq,
                    });
                    if applied == Applied::Accepted {
                        self.apply_inbound(msg, now_us, t, &mut records);
                    }
                }
            }
        }
        self.purge_stale(now_us);

        for i in 0..self.widgets.len() {
            let w = &self.widgets[i];
            if !w.has_robots {
                continue;
            }
            let held = w
                .cfg
                .spec
                .bound_robots()
                .iter()
                .any(|r| self.world.robot(r).is_some_and(|r| r.state.grabbed_by_local));
            if !held {
                continue;
            }
            if let Some(p) = w.cfg.spec.read(&self.observed, &w.params) {
                if p != w.params {
                    let w = &mut self.widgets[i];
                    w.params = p.clone();
                    w.changed_at_us = stamp;
                    w.owner = true;
                    let widget = w.cfg.spec.id.clone();
                    self.event(
                        &mut records,
                        t,
                        RunEvent::WidgetParams {
                            widget,
                            params: p,
                            origin: side,
                        },
                    );
                }
            }
        }

        let (mut candidates, events) =
            self.coupler
                .compute_goals(&mut self.bindings, &self.inputs, t, self.default_tolerance);
        for e in events {
            let CouplingEvent::UnresolvedSource { binding_id, source_key } = e;
            self.event(&mut records, t, RunEvent::UnresolvedSource { binding_id, source_key });
        }
        for g in &self.finger_groups {
            let Some(hand) = self.inputs.hands.get(&g.hand) else {
                continue;
            };
            let present = hand.fingers.keys().copied().collect();
            for (finger, robot) in assign_fingers(&present, &g.robots) {
                candidates.push(CandidateGoal {
                    binding_id: format!("fingers/{}/{}", g.hand, finger.name()),
                    robot_id: robot,
                    goal: GoalSpec {
                        target: self.coupler.calibration.apply(hand.fingers[&finger]),
                        target_heading: None,
                        tolerance: self.default_tolerance,
                        priority: g.priority,
                    },
                });
            }
        }
        for w in self.widgets.iter().filter(|w| w.has_robots) {
            let tol = w.cfg.tolerance.unwrap_or(self.default_tolerance);
            for (robot, goal) in w.cfg.spec.goals(&w.params, tol, w.cfg.priority) {
                candidates.push(CandidateGoal {
                    binding_id: format!("widget/{}", w.cfg.spec.id),
                    robot_id: robot,
                    goal,
                });
            }
        }
        let states: Vec<RobotState> = self.world.robots().iter().map(|r| r.state.clone()).collect();
        let goals = resolve_conflicts(&candidates, &states);

        let work: Vec<(&RobotState, &GoalSpec, RobotSpec)> = self
            .world
            .robots()
            .iter()
            .filter_map(|r| goals.get(&r.state.id).map(|g| (&r.state, g, r.spec)))
            .collect();
        let mode = if work.len() >= PARALLEL_ROBOT_THRESHOLD {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        };
        let computed = map_items(&work, mode, |(s, g, spec)| (s.id.clone(), goto_controller(s, g, spec)));
        let commands: BTreeMap<String, MotorCommand> = computed.into_iter().collect();

        for i in 0..self.widgets.len() {
            if !self.widgets[i].owner {
                continue;
            }
            let w = &self.widgets[i];
            let payload = Payload::WidgetParam {
                widget_id: w.cfg.spec.id.clone(),
                params: w.params.iter().map(|(k, v)| (k.clone(), to_micro(*v))).collect(),
            };
            let ts = w.changed_at_us;
            self.offer(&mut out, payload, now_us, WIDGET, ts);
        }

        let snapshot = self.world.snapshot();
        self.world.step_world(&commands, spec.dt_s)?;
        Ok(PeerTick {
            records,
            outbox: out,
            snapshot,
            goals,
            commands,
        })
    }

    fn emit_scripted(
        &mut self,
        spec: &ScenarioSpec,
        now_us: u64,
        t: f64,
        records: &mut Vec<LogRecord>,
        out: &mut Vec<Outgoing>,
    ) {
        let side = self.side;
        let stamp = self.stamp(now_us);
        let s = &spec.scripts;
        let live = |start: f64, end: Option<f64>| now_us >= us(start) && end.is_none_or(|e| now_us < us(e));

        for v in s.virtual_objects.iter().filter(|v| v.from == side) {
            if !live(v.waypoints[0].t, v.end) {
                continue;
            }
            let payload = Payload::GoalCmd {
                subject_id: v.id.clone(),
                target: WirePoint::from_point(point_at(&v.waypoints, t)),
                heading: None,
                tolerance: (self.default_tolerance * 100.0).round() as u32,
                priority: 0,
            };
            self.offer(out, payload, now_us, STREAM, stamp);
        }
        for h in s.hands.iter().filter(|h| h.from == side) {
            if !live(h.frames[0].t, h.end) {
                continue;
            }
            if let Some(hand) = hand_at(&h.frames, t) {
                let payload = hand_payload(&h.id, &hand);
                self.offer(out, payload, now_us, STREAM, stamp);
            }
        }
        for k in s.skeletons.iter().filter(|k| k.from == side) {
            if !live(k.waypoints[0].t, k.end) {
                continue;
            }
            let payload = Payload::BodyPose {
                body_id: k.id.clone(),
                joints: vec![(k.joint.clone(), WirePoint::from_point(point_at(&k.waypoints, t)))],
                scale: to_micro(k.scale),
            };
            self.offer(out, payload, now_us, STREAM, stamp);
        }
        if let Some(hand) = self.pointer.clone() {
            let payload = hand_payload(POINTER_HAND_ID, &hand);
            self.offer(out, payload, now_us, STREAM, stamp);
        }
        for payload in std::mem::take(&mut self.injected) {
            if let Payload::WidgetParam { widget_id, params } = &payload {
                self.set_widget(
                    widget_id,
                    params.iter().map(|(k, v)| (k.clone(), from_micro(*v))).collect(),
                    stamp,
                    t,
                    records,
                );
            }
            self.queue(out, payload, stamp);
        }
        for (i, w) in s.widget_sets.iter().enumerate() {
            if w.from == side && !self.widget_set_fired[i] && now_us >= us(w.t) {
                self.widget_set_fired[i] = true;
                self.set_widget(&w.widget, w.params.clone(), stamp, t, records);
            }
        }
        for (i, c) in s.bind_ctl.iter().enumerate() {
            if c.from == side && !self.bind_ctl_fired[i] && now_us >= us(c.t) {
                self.bind_ctl_fired[i] = true;
                self.bind_ctl_state.insert(c.binding.clone(), c.active);
            }
        }
        let ctl: Vec<(String, bool)> = self.bind_ctl_state.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for (binding_id, active) in ctl {
            self.offer(out, Payload::BindCtl { binding_id, active }, now_us, STATE, stamp);
        }
        if side == Side::Local {
            if let Some(cal) = &spec.calibration {
                let tf = self.coupler.calibration;
                let payload = Payload::Calibration {
                    mat_id: cal.mat_id.clone(),
                    rotation: to_millideg(tf.rotation),
                    dx: to_centi(tf.dx),
                    dy: to_centi(tf.dy),
                    scale: to_micro(tf.scale),
                };
                let cadence = Cadence {
                    min_interval_us: 0,
                    heartbeat_us: CALIBRATION_PERIOD_US,
                };
                self.offer(out, payload, now_us, cadence, stamp);
            }
        }
    }

    fn set_widget(&mut self, widget: &str, params: Params, stamp: u64, t: f64, records: &mut Vec<LogRecord>) {
        let side = self.side;
        if let Some(w) = self.widgets.iter_mut().find(|w| w.cfg.spec.id == widget) {
            w.params = params.clone();
            w.changed_at_us = stamp;
            w.owner = true;
            records.push(LogRecord::Event {
                t,
                room: side,
                event: RunEvent::WidgetParams {
                    widget: widget.to_string(),
                    params,
                    origin: side,
                },
            });
        }
    }

    fn apply_inbound(&mut self, msg: Message, now_us: u64, t: f64, records: &mut Vec<LogRecord>) {
        let key = (msg.msg_type(), msg.payload.subject_id().to_string());
        let ts = msg.timestamp_us as f64 / 1e6;
        match msg.payload {
            Payload::RobotState { robot_id, pose, .. } => {
                self.inputs.remote_robots.insert(robot_id, pose.to_pose());
                self.input_seen.insert(key, now_us);
            }
            Payload::GoalCmd {
                subject_id,
                target,
                heading,
                ..
            } => {
                let p = target.to_point();
                let theta = heading.map(from_millideg).unwrap_or(0.0);
                self.inputs
                    .virtual_objects
                    .insert(subject_id, Pose2D::new(p.x, p.y, theta));
                self.input_seen.insert(key, now_us);
            }
            Payload::HandPose {
                hand_id,
                fingers,
                pinching,
            } => {
                if fingers.is_empty() {
                    self.inputs.hands.remove(&hand_id);
                    self.input_seen.remove(&key);
                } else {
                    let hand = HandPose {
                        timestamp: ts,
                        fingers: fingers.into_iter().map(|(f, p)| (f, p.to_point())).collect(),
                        grab_state: pinching.map(GrabState::Pinching).unwrap_or_default(),
                    };
                    self.inputs.hands.insert(hand_id, hand);
                    self.input_seen.insert(key, now_us);
                }
            }
            Payload::BodyPose { body_id, joints, scale } => {
                let sk = BodySkeleton {
                    timestamp: ts,
                    joints: joints.into_iter().map(|(n, p)| (n, p.to_point())).collect(),
                    world_to_miniature_scale: from_micro(scale),
                };
                self.inputs.skeletons.insert(body_id, sk);
                self.input_seen.insert(key, now_us);
            }
            Payload::GrabEvent {
                subject_id, grabbed, ..
            } => {
                self.event(
                    records,
                    t,
                    RunEvent::RemoteGrab {
                        subject: subject_id,
                        grabbed,
                    },
                );
            }
            Payload::WidgetParam { widget_id, params } => {
                let params: Params = params.into_iter().map(|(k, v)| (k, from_micro(v))).collect();
                let side = self.side;
                if let Some(w) = self.widgets.iter_mut().find(|w| w.cfg.spec.id == widget_id) {
                    if msg.timestamp_us > w.changed_at_us {
                        w.changed_at_us = msg.timestamp_us;
                        w.owner = false;
                        if w.params != params {
                            w.params = params.clone();
                            records.push(LogRecord::Event {
                                t,
                                room: side,
                                event: RunEvent::WidgetParams {
                                    widget: widget_id,
                                    params,
                                    origin: side.other(),
                                },
                            });
                        }
                    }
                }
            }
            Payload::Calibration {
                rotation,
                dx,
                dy,
                scale,
                ..
            } => {
                if self.side == Side::Remote && scale > 0 {
                    let tf = Transform2D {
                        rotation: from_millideg(rotation),
                        dx: from_centi(dx),
                        dy: from_centi(dy),
                        scale: from_micro(scale),
                    };
                    self.coupler.calibration = tf.inverse();
                }
            }
            Payload::BindCtl { binding_id, active } => {
                let mut changed = false;
                for b in self.bindings.iter_mut().filter(|b| b.id == binding_id) {
                    if b.active != active {
                        b.active = active;
                        changed = true;
                    }
                }
                if changed {
                    self.coupler.reset(&binding_id);
                    self.event(
                        records,
                        t,
                        RunEvent::BindingChanged {
                            binding: binding_id,
                            active,
                        },
                    );
                }
            }
        }
    }

    fn purge_stale(&mut self, now_us: u64) {
        let stale: Vec<(MsgType, String)> = self
            .input_seen
            .iter()
            .filter(|(_, &seen)| now_us.saturating_sub(seen) > INPUT_STALE_US)
            .map(|(k, _)| k.clone())
            .collect();
        for key in stale {
            self.input_seen.remove(&key);
            let (ty, id) = &key;
            match ty {
                MsgType::RobotState => {
                    self.inputs.remote_robots.remove(id);
                }
                MsgType::GoalCmd => {
                    self.inputs.virtual_objects.remove(id);
                }
                MsgType::HandPose => {
                    self.inputs.hands.remove(id);
                }
                MsgType::BodyPose => {
                    self.inputs.skeletons.remove(id);
                }
                _ => {}
            }
        }
    }
}

fn hand_payload(id: &str, hand: &HandPose) -> Payload {
    Payload::HandPose {
        hand_id: id.to_string(),
        fingers: hand
            .fingers
            .iter()
            .map(|(f, p)| (*f, WirePoint::from_point(*p)))
            .collect(),
        pinching: match &hand.grab_state {
            GrabState::Pinching(o) => Some(o.clone()),
            GrabState::Open => None,
        },
    }
}

/// RNG seed for the simulated link carrying traffic sent by `side`.
pub fn link_seed(seed: u64, side: Side) -> u64 {
    seed.wrapping_mul(2).wrapping_add(1 + side.index() as u64)
}

/// A run in progress. Drive it with [`Session::step`] or
/// [`Session::run_to_end`].
pub struct Session {
    spec: ScenarioSpec,
    peers: [Peer; 2],
    /// Indexed by sending side.
    links: [Box<dyn Transport + Send>; 2],
    dt_us: u64,
    n_ticks: u64,
    tick: u64,
    log: LogWriter,
    snapshots: Vec<TickSnapshot>,
    trigger_fired: Vec<bool>,
    pending: Vec<Injection>,
    last_goals: BTreeMap<String, Point>,
    pointer_onset: Option<f64>,
    last_start_latency: Option<f64>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("scenario", &self.spec.id)
            .field("tick", &self.tick)
            .field("n_ticks", &self.n_ticks)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// A run over simulated links seeded from the scenario seed.
    pub fn new(spec: ScenarioSpec) -> Result<Self, RunError> {
        let link = |side| {
            let model = crate::net::LinkModel {
                rng_seed: link_seed(spec.seed, side),
                ..spec.link
            };
            Box::new(SimLink::new(model)) as Box<dyn Transport + Send>
        };
        let links = [link(Side::Remote), link(Side::Local)];
        Self::with_transports(spec, links)
    }

    /// `links[0]` carries remote-to-local traffic, `links[1]` the reverse.
    pub fn with_transports(mut spec: ScenarioSpec, links: [Box<dyn Transport + Send>; 2]) -> Result<Self, RunError> {
        spec.link.rng_seed = spec.seed;
        spec.validate()?;
        let to_local = spec.remote_to_local()?;
        let peers = [
            Peer::new(&spec, Side::Remote, to_local.inverse()),
            Peer::new(&spec, Side::Local, to_local),
        ];
        let dt_us = us(spec.dt_s);
        let n_ticks = (spec.duration_s * 1e6 / dt_us as f64).round() as u64;
        let mut log = LogWriter::new();
        log.write(&LogRecord::Header {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            scenario: Box::new(spec.clone()),
        });
        Ok(Self {
            trigger_fired: vec![false; spec.triggers.len()],
            spec,
            peers,
            links,
            dt_us,
            n_ticks,
            tick: 0,
            log,
            snapshots: Vec::new(),
            pending: Vec::new(),
            last_goals: BTreeMap::new(),
            pointer_onset: None,
            last_start_latency: None,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.n_ticks
    }

    pub fn now(&self) -> f64 {
        (self.tick * self.dt_us) as f64 / 1e6
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_us as f64 / 1e6
    }

    /// Applied at the start of the next tick.
    pub fn inject(&mut self, injection: Injection) {
        self.pending.push(injection);
    }

    pub fn link_stats(&self) -> LinkStats {
        let (a, b) = (self.links[0].stats(), self.links[1].stats());
        LinkStats {
            sent: a.sent + b.sent,
            dropped: a.dropped + b.dropped,
            delivered: a.delivered + b.delivered,
        }
    }

    pub fn last_snapshot(&self) -> Option<&TickSnapshot> {
        self.snapshots.last()
    }

    /// The most recent tick in the console's snapshot form.
    pub fn bridge_snapshot(&self) -> Option<BridgeMessage> {
        let s = self.snapshots.last()?;
        Some(BridgeMessage::Snapshot {
            t: s.t,
            remote: s.remote.clone(),
            local: s.local.clone(),
            goals: self.last_goals.clone(),
            link: self.link_stats(),
            start_latency_s: self.last_start_latency,
            link_params: Some(LinkParams::from_model(&self.spec.link)),
        })
    }

    fn apply_injections(&mut self, now_us: u64, t: f64) {
        for inj in std::mem::take(&mut self.pending) {
            match inj {
                Injection::LinkParams(p) => {
                    let (p, _) = p.clamped();
                    for l in self.links.iter_mut() {
                        l.set_link_params(&p);
                    }
                    self.spec.link = p.apply_to(&self.spec.link);
                    self.log.write(&LogRecord::Event {
                        t,
                        room: Side::Remote,
                        event: RunEvent::LinkParams { params: p },
                    });
                }
                Injection::Pointer { x, y, pressed, target } => {
                    let remote = &mut self.peers[Side::Remote.index()];
                    let hand = HandPose {
                        timestamp: t,
                        fingers: BTreeMap::from([(Finger::Index, Point::new(x, y))]),
                        grab_state: match (pressed, target) {
                            (true, Some(o)) => GrabState::Pinching(o),
                            _ => GrabState::Open,
                        },
                    };
                    let moved = remote.pointer.as_ref().map(|h| &h.fingers) != Some(&hand.fingers);
                    if moved && self.pointer_onset.is_none() {
                        self.pointer_onset = Some(now_us as f64 / 1e6);
                    }
                    remote.pointer = Some(hand);
                }
                Injection::Remote(payload) => self.peers[Side::Remote.index()].injected.push(payload),
            }
        }
    }

    /// Advances both rooms by one tick. Returns `false` once the run is over.
    pub fn step(&mut self) -> Result<bool, RunError> {
        if self.is_done() {
            return Ok(false);
        }
        let now_us = self.tick * self.dt_us;
        let t = now_us as f64 / 1e6;
        for (i, tr) in self.spec.triggers.iter().enumerate() {
            if !self.trigger_fired[i] && now_us >= us(tr.t) {
                self.trigger_fired[i] = true;
                self.log.write(&LogRecord::Event {
                    t: tr.t,
                    room: tr.room,
                    event: RunEvent::Trigger {
                        label: tr.label.clone(),
                        robot: tr.robot.clone(),
                    },
                });
            }
        }
        self.apply_injections(now_us, t);

        let mut rooms: Vec<(Side, PeerTick)> = Vec::with_capacity(2);
        for side in [Side::Remote, Side::Local] {
            let inbound = self.links[side.other().index()].poll(now_us);
            let pt = self.peers[side.index()].tick(&self.spec, now_us, inbound)?;
            for r in &pt.records {
                self.log.write(r);
            }
            let link = &mut self.links[side.index()];
            for o in &pt.outbox {
                let msg = Message {
                    seq: o.seq,
                    timestamp_us: o.timestamp_us,
                    payload: o.payload.clone(),
                };
                let before = link.stats().dropped;
                link.send(side.name(), encode(&msg), now_us);
                let dropped = link.stats().dropped > before;
                self.log.write(&LogRecord::Msg {
                    t,
                    from: side,
                    ev: if dropped { MsgEvent::Dropped } else { MsgEvent::Sent },
                    msg_type: msg.msg_type().name().to_string(),
                    subject: msg.payload.subject_id().to_string(),
                    seq: msg.seq,
                });
            }
            rooms.push((side, pt));
        }

        let mut ticks: Vec<RoomTick> = Vec::with_capacity(2);
        self.last_goals.clear();
        for (side, pt) in &rooms {
            let goals: BTreeMap<String, LoggedGoal> = pt.goals.iter().map(|(k, g)| (k.clone(), g.into())).collect();
            let commands: BTreeMap<String, [f64; 2]> = pt
                .commands
                .iter()
                .filter(|(_, c)| !c.is_zero())
                .map(|(k, c)| (k.clone(), [c.v, c.omega]))
                .collect();
            for (k, g) in &pt.goals {
                self.last_goals.insert(format!("{}/{}", side.name(), k), g.target);
            }
            if *side == Side::Local {
                if let Some(onset) = self.pointer_onset {
                    if !commands.is_empty() {
                        self.last_start_latency = Some(t - onset);
                        self.pointer_onset = None;
                    }
                }
            }
            ticks.push(self.log.room_tick(*side, &pt.snapshot, goals, commands));
        }
        let local = ticks.pop().expect("local room");
        let remote = ticks.pop().expect("remote room");
        self.log.write(&LogRecord::Tick { t, remote, local });
        let mut it = rooms.into_iter().map(|(_, pt)| pt.snapshot);
        self.snapshots.push(TickSnapshot {
            t,
            remote: it.next().expect("remote snapshot"),
            local: it.next().expect("local snapshot"),
        });
        self.tick += 1;
        Ok(true)
    }

    /// Writes the closing record and computes metrics from the log text.
    pub fn finish(mut self) -> RunOutput {
        let t = self.now();
        let remote = self.peers[0].world.snapshot();
        let local = self.peers[1].world.snapshot();
        let rt = self
            .log
            .room_tick(Side::Remote, &remote, BTreeMap::new(), BTreeMap::new());
        let lt = self
            .log
            .room_tick(Side::Local, &local, BTreeMap::new(), BTreeMap::new());
        self.log.write(&LogRecord::End {
            t,
            remote: rt,
            local: lt,
            link: [self.links[0].stats(), self.links[1].stats()],
        });
        self.snapshots.push(TickSnapshot { t, remote, local });
        let log = self.log.into_string();
        let records = parse_log(&log).expect("own log parses");
        RunOutput {
            metrics: compute_metrics(&records),
            log,
            snapshots: self.snapshots,
        }
    }

    pub fn run_to_end(mut self) -> Result<RunOutput, RunError> {
        while self.step()? {}
        Ok(self.finish())
    }
}

/// Runs `spec` with `overrides` applied, fully deterministic for a given seed.
pub fn run_scenario(spec: &ScenarioSpec, overrides: &Overrides) -> Result<RunOutput, RunError> {
    Session::new(spec.clone().with_overrides(overrides))?.run_to_end()
}
