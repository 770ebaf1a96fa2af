//! JSON message set spoken over the operator-console websocket.
//!
//! Mirrors the binary wire messages with the same field names in natural
//! units (cm, degrees, seconds), plus three UI-only types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::codec::{
    from_centi, from_micro, from_millideg, to_centi, to_micro, to_millideg, Message, Payload, WirePoint, WirePose,
};
use super::link::{LinkModel, LinkStats};
use crate::coupling::Finger;
use crate::geometry::{Point, Pose2D};
use crate::sim::WorldSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BridgeMessage {
    RobotState {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        robot_id: String,
        x: f64,
        y: f64,
        theta: f64,
        v: f64,
        omega: f64,
        grabbed: bool,
    },
    GoalCmd {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        subject_id: String,
        x: f64,
        y: f64,
        #[serde(default)]
        heading: Option<f64>,
        tolerance: f64,
        #[serde(default)]
        priority: i32,
    },
    HandPose {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        hand_id: String,
        fingers: BTreeMap<Finger, Point>,
        #[serde(default)]
        pinching: Option<String>,
    },
    BodyPose {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        body_id: String,
        joints: BTreeMap<String, Point>,
        scale: f64,
    },
    GrabEvent {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        subject_id: String,
        grabbed: bool,
        #[serde(default)]
        by_remote: bool,
    },
    WidgetParam {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        widget_id: String,
        params: BTreeMap<String, f64>,
    },
    Calibration {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        mat_id: String,
        rotation: f64,
        dx: f64,
        dy: f64,
        scale: f64,
    },
    BindCtl {
        #[serde(default)]
        seq: u32,
        #[serde(default)]
        timestamp: f64,
        binding_id: String,
        active: bool,
    },
    /// Both rooms at one tick.
    Snapshot {
        t: f64,
        remote: WorldSnapshot,
        local: WorldSnapshot,
        #[serde(default)]
        goals: BTreeMap<String, Point>,
        #[serde(default)]
        link: LinkStats,
        #[serde(default)]
        start_latency_s: Option<f64>,
        #[serde(default)]
        link_params: Option<LinkParams>,
    },
    SetLinkParams(LinkParams),
    /// Mouse or touch input standing in for the remote user's index finger.
    PointerInput {
        x: f64,
        y: f64,
        pressed: bool,
        #[serde(default)]
        target: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub one_way_latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
}

/// Upper bound accepted from the console for latency and jitter.
pub const MAX_CONSOLE_LATENCY_MS: f64 = 2000.0;

impl LinkParams {
    /// Clamps into range; jitter may not exceed latency. Returns whether
    /// anything had to change.
    pub fn clamped(&self) -> (LinkParams, bool) {
        let fix = |v: f64, lo: f64, hi: f64| if v.is_nan() { lo } else { v.clamp(lo, hi) };
        let latency = fix(self.one_way_latency_ms, 0.0, MAX_CONSOLE_LATENCY_MS);
        let jitter = fix(self.jitter_ms, 0.0, latency);
        let loss = fix(self.loss_rate, 0.0, 0.999);
        let out = LinkParams {
            one_way_latency_ms: latency,
            jitter_ms: jitter,
            loss_rate: loss,
        };
        (out, out != *self)
    }

    pub fn apply_to(&self, model: &LinkModel) -> LinkModel {
        LinkModel {
            one_way_latency_ms: self.one_way_latency_ms,
            jitter_ms: self.jitter_ms,
            loss_rate: self.loss_rate,
            ..*model
        }
    }

    pub fn from_model(model: &LinkModel) -> Self {
        Self {
            one_way_latency_ms: model.one_way_latency_ms,
            jitter_ms: model.jitter_ms,
            loss_rate: model.loss_rate,
        }
    }
}

impl BridgeMessage {
    pub fn from_message(m: &Message) -> BridgeMessage {
        let seq = m.seq;
        let timestamp = m.timestamp_us as f64 / 1e6;
        match &m.payload {
            Payload::RobotState {
                robot_id,
                pose,
                v,
                omega,
                grabbed,
            } => {
                let p = pose.to_pose();
                BridgeMessage::RobotState {
                    seq,
                    timestamp,
                    robot_id: robot_id.clone(),
                    x: p.x,
                    y: p.y,
                    theta: p.theta,
                    v: from_centi(*v),
                    omega: from_millideg(*omega),
                    grabbed: *grabbed,
                }
            }
            Payload::GoalCmd {
                subject_id,
                target,
                heading,
                tolerance,
                priority,
            } => BridgeMessage::GoalCmd {
                seq,
                timestamp,
                subject_id: subject_id.clone(),
                x: from_centi(target.x),
                y: from_centi(target.y),
                heading: heading.map(from_millideg),
                tolerance: *tolerance as f64 / 100.0,
                priority: *priority,
            },
            Payload::HandPose {
                hand_id,
                fingers,
                pinching,
            } => BridgeMessage::HandPose {
                seq,
                timestamp,
                hand_id: hand_id.clone(),
                fingers: fingers.iter().map(|(f, p)| (*f, p.to_point())).collect(),
                pinching: pinching.clone(),
            },
            Payload::BodyPose { body_id, joints, scale } => BridgeMessage::BodyPose {
                seq,
                timestamp,
                body_id: body_id.clone(),
                joints: joints.iter().map(|(n, p)| (n.clone(), p.to_point())).collect(),
                scale: from_micro(*scale),
            },
            Payload::GrabEvent {
                subject_id,
                grabbed,
                by_remote,
            } => BridgeMessage::GrabEvent {
                seq,
                timestamp,
                subject_id: subject_id.clone(),
                grabbed: *grabbed,
                by_remote: *by_remote,
            },
            Payload::WidgetParam { widget_id, params } => BridgeMessage::WidgetParam {
                seq,
                timestamp,
                widget_id: widget_id.clone(),
                params: params.iter().map(|(k, v)| (k.clone(), from_micro(*v))).collect(),
            },
            Payload::Calibration {
                mat_id,
                rotation,
                dx,
                dy,
                scale,
            } => BridgeMessage::Calibration {
                seq,
                timestamp,
                mat_id: mat_id.clone(),
                rotation: from_millideg(*rotation),
                dx: from_centi(*dx),
                dy: from_centi(*dy),
                scale: from_micro(*scale),
            },
            Payload::BindCtl { binding_id, active } => BridgeMessage::BindCtl {
                seq,
                timestamp,
                binding_id: binding_id.clone(),
                active: *active,
            },
        }
    }

    /// The wire payload for a mirrored message; `None` for UI-only types.
    pub fn to_payload(&self) -> Option<Payload> {
        Some(match self {
            BridgeMessage::RobotState {
                robot_id,
                x,
                y,
                theta,
                v,
                omega,
                grabbed,
                ..
            } => Payload::RobotState {
                robot_id: robot_id.clone(),
                pose: WirePose::from_pose(&Pose2D::new(*x, *y, *theta)),
                v: to_centi(*v),
                omega: to_millideg(*omega),
                grabbed: *grabbed,
            },
            BridgeMessage::GoalCmd {
                subject_id,
                x,
                y,
                heading,
                tolerance,
                priority,
                ..
            } => Payload::GoalCmd {
                subject_id: subject_id.clone(),
                target: WirePoint::from_point(Point::new(*x, *y)),
                heading: heading.map(to_millideg),
                tolerance: (tolerance * 100.0).round().max(0.0) as u32,
                priority: *priority,
            },
            BridgeMessage::HandPose {
                hand_id,
                fingers,
                pinching,
                ..
            } => Payload::HandPose {
                hand_id: hand_id.clone(),
                fingers: fingers.iter().map(|(f, p)| (*f, WirePoint::from_point(*p))).collect(),
                pinching: pinching.clone(),
            },
            BridgeMessage::BodyPose {
                body_id, joints, scale, ..
            } => Payload::BodyPose {
                body_id: body_id.clone(),
                joints: joints
                    .iter()
                    .map(|(n, p)| (n.clone(), WirePoint::from_point(*p)))
                    .collect(),
                scale: to_micro(*scale),
            },
            BridgeMessage::GrabEvent {
                subject_id,
                grabbed,
                by_remote,
                ..
            } => Payload::GrabEvent {
                subject_id: subject_id.clone(),
                grabbed: *grabbed,
                by_remote: *by_remote,
            },
            BridgeMessage::WidgetParam { widget_id, params, .. } => Payload::WidgetParam {
                widget_id: widget_id.clone(),
                params: params.iter().map(|(k, v)| (k.clone(), to_micro(*v))).collect(),
            },
            BridgeMessage::Calibration {
                mat_id,
                rotation,
                dx,
                dy,
                scale,
                ..
            } => Payload::Calibration {
                mat_id: mat_id.clone(),
                rotation: to_millideg(*rotation),
                dx: to_centi(*dx),
                dy: to_centi(*dy),
                scale: to_micro(*scale),
            },
            BridgeMessage::BindCtl { binding_id, active, .. } => Payload::BindCtl {
                binding_id: binding_id.clone(),
                active: *active,
            },
            BridgeMessage::Snapshot { .. } | BridgeMessage::SetLinkParams(_) | BridgeMessage::PointerInput { .. } => {
                return None
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge message serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_uses_wire_names_and_units() {
        let m = Message {
            seq: 3,
            timestamp_us: 1_500_000,
            payload: Payload::RobotState {
                robot_id: "r1".into(),
                pose: WirePose::from_pose(&Pose2D::new(10.0, 5.0, 90.0)),
                v: 1750,
                omega: 0,
                grabbed: false,
            },
        };
        let b = BridgeMessage::from_message(&m);
        let v: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(v["type"], "ROBOT_STATE");
        assert_eq!(v["robot_id"], "r1");
        assert_eq!(v["x"], 10.0);
        assert_eq!(v["theta"], 90.0);
        assert_eq!(v["v"], 17.5);
        assert_eq!(v["timestamp"], 1.5);
        assert_eq!(b.to_payload().unwrap(), m.payload);
    }

    #[test]
    fn ui_only_messages_parse() {
        let p = BridgeMessage::from_json(r#"{"type":"POINTER_INPUT","x":12.5,"y":3,"pressed":true}"#).unwrap();
        assert_eq!(
            p,
            BridgeMessage::PointerInput {
                x: 12.5,
                y: 3.0,
                pressed: true,
                target: None
            }
        );
        assert!(p.to_payload().is_none());
        let s = BridgeMessage::from_json(
            r#"{"type":"SET_LINK_PARAMS","one_way_latency_ms":200,"jitter_ms":5,"loss_rate":0.1}"#,
        )
        .unwrap();
        assert!(
            matches!(s, BridgeMessage::SetLinkParams(LinkParams { one_way_latency_ms, .. }) if one_way_latency_ms == 200.0)
        );
    }

    #[test]
    fn link_params_clamp() {
        let (p, changed) = LinkParams {
            one_way_latency_ms: 50.0,
            jitter_ms: 80.0,
            loss_rate: 0.0,
        }
        .clamped();
        assert!(changed);
        assert_eq!(p.jitter_ms, 50.0);
        let ok = LinkParams {
            one_way_latency_ms: 50.0,
            jitter_ms: 5.0,
            loss_rate: 0.2,
        };
        assert_eq!(ok.clamped(), (ok, false));
    }
}
