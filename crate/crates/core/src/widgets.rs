//! Tangible widgets: two-way mappings between robot poses and virtual
//! parameters (picture control points, sliders, knobs and buttons).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, normalize_deg, Point, Pose2D};
use crate::robot::GoalSpec;

/// Release hysteresis for buttons, cm.
pub const BUTTON_HYSTERESIS_CM: f64 = 0.5;
/// Relative disagreement between x and y scale before an aspect warning.
pub const ASPECT_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WidgetError {
    #[error("degenerate anchors: extent ({w}, {h}) must be positive")]
    DegenerateAnchors { w: f64, h: f64 },
    #[error("invalid widget {id:?}: {reason}")]
    InvalidWidget { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageState {
    pub translation: Point,
    pub scale: f64,
    /// Set when the y extent disagrees with the x-driven scale by more than 10%.
    #[serde(default)]
    pub aspect_violation: bool,
}

/// Picture placement from its upper-left and bottom-right corners (y down).
pub fn image_state_from_anchors(ul: Point, br: Point, base_size: (f64, f64)) -> Result<ImageState, WidgetError> {
    let (w, h) = (br.x - ul.x, br.y - ul.y);
    if !(w > 0.0 && h > 0.0) {
        return Err(WidgetError::DegenerateAnchors { w, h });
    }
    let scale = w / base_size.0;
    let scale_y = h / base_size.1;
    Ok(ImageState {
        translation: ul,
        scale,
        aspect_violation: ((scale_y - scale) / scale).abs() > ASPECT_TOLERANCE,
    })
}

pub fn anchors_from_image_state(translation: Point, scale: f64, base_size: (f64, f64)) -> (Point, Point) {
    (
        translation,
        Point::new(translation.x + scale * base_size.0, translation.y + scale * base_size.1),
    )
}

/// Position of `pose` along the track as a fraction in `[0, 1]`.
pub fn slider_param(pose: &Pose2D, track: (Point, Point)) -> f64 {
    let (a, b) = track;
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return 0.0;
    }
    ((pose.position() - a).dot(ab) / len2).clamp(0.0, 1.0)
}

pub fn slider_goal(param: f64, track: (Point, Point)) -> Point {
    let (a, b) = track;
    a + (b - a) * param.clamp(0.0, 1.0)
}

/// Heading range `theta0 -> theta1` (degrees, signed sweep) mapped onto `p0 -> p1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnobRange {
    pub theta0: f64,
    pub theta1: f64,
    #[serde(default)]
    pub p0: f64,
    #[serde(default = "one")]
    pub p1: f64,
}

fn one() -> f64 {
    1.0
}

impl KnobRange {
    fn sweep(&self) -> f64 {
        self.theta1 - self.theta0
    }

    fn lerp(&self, u: f64) -> f64 {
        self.p0 + (self.p1 - self.p0) * u.clamp(0.0, 1.0)
    }
}

/// Knob parameter from a robot heading.
///
/// Headings inside the swept arc map linearly; headings outside it clamp to
/// whichever end is angularly closer.
pub fn knob_param(heading: f64, range: &KnobRange) -> f64 {
    let sweep = range.sweep();
    let span = sweep.abs().min(360.0);
    let offset = if sweep >= 0.0 {
        normalize_deg(heading - range.theta0)
    } else {
        normalize_deg(range.theta0 - heading)
    };
    if offset <= span {
        return range.lerp(offset / span);
    }
    let to_start = angle_diff_deg(heading, range.theta0).abs();
    let to_end = angle_diff_deg(heading, range.theta1).abs();
    range.lerp(if to_start <= to_end { 0.0 } else { 1.0 })
}

pub fn knob_heading(param: f64, range: &KnobRange) -> f64 {
    let dp = range.p1 - range.p0;
    let u = if dp == 0.0 {
        0.0
    } else {
        ((param - range.p0) / dp).clamp(0.0, 1.0)
    };
    normalize_deg(range.theta0 + u * range.sweep())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ButtonState {
    Pressed,
    #[default]
    Released,
}

/// Proximity button with release hysteresis.
pub fn button_state(pose: &Pose2D, trigger: Point, radius: f64, previous: ButtonState) -> ButtonState {
    let d = pose.position().distance(trigger);
    let limit = match previous {
        ButtonState::Pressed => radius + BUTTON_HYSTERESIS_CM,
        ButtonState::Released => radius,
    };
    if d <= limit {
        ButtonState::Pressed
    } else {
        ButtonState::Released
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WidgetKind {
    ControlPoints {
        ul_robot: String,
        br_robot: String,
        base_size: (f64, f64),
    },
    Slider {
        robot: String,
        track: (Point, Point),
    },
    Knob {
        robot: String,
        center: Point,
        range: KnobRange,
    },
    Button {
        robot: String,
        trigger: Point,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: WidgetKind,
}

/// Named parameter values, e.g. `{"scale": 2.0, "tx": 5.0, "ty": 5.0}`.
pub type Params = BTreeMap<String, f64>;

impl WidgetSpec {
    pub fn validate(&self) -> Result<(), WidgetError> {
        let bad = |reason: &str| {
            Err(WidgetError::InvalidWidget {
                id: self.id.clone(),
                reason: reason.into(),
            })
        };
        match &self.kind {
            WidgetKind::ControlPoints {
                base_size,
                ul_robot,
                br_robot,
            } => {
                if !(base_size.0 > 0.0 && base_size.1 > 0.0) {
                    return bad("base_size must be positive");
                }
                if ul_robot == br_robot {
                    return bad("control points need two distinct robots");
                }
            }
            WidgetKind::Slider { track, .. } => {
                if track.0.distance(track.1) == 0.0 {
                    return bad("slider track has zero length");
                }
            }
            WidgetKind::Knob { range, .. } => {
                if range.theta0 == range.theta1 {
                    return bad("knob heading range is empty");
                }
            }
            WidgetKind::Button { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("button radius must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn bound_robots(&self) -> Vec<&str> {
        match &self.kind {
            WidgetKind::ControlPoints { ul_robot, br_robot, .. } => vec![ul_robot, br_robot],
            WidgetKind::Slider { robot, .. } | WidgetKind::Knob { robot, .. } | WidgetKind::Button { robot, .. } => {
                vec![robot]
            }
        }
    }

    /// Initial parameters before anything has been read or set.
    pub fn default_params(&self) -> Params {
        match &self.kind {
            WidgetKind::ControlPoints { .. } => {
                Params::from([("scale".into(), 1.0), ("tx".into(), 0.0), ("ty".into(), 0.0)])
            }
            WidgetKind::Slider { .. } => Params::from([("value".into(), 0.0)]),
            WidgetKind::Knob { range, .. } => Params::from([("value".into(), range.p0)]),
            WidgetKind::Button { .. } => Params::from([("pressed".into(), 0.0)]),
        }
    }

    /// Parameters implied by robot poses. `previous` carries button state.
    pub fn read(&self, poses: &BTreeMap<String, Pose2D>, previous: &Params) -> Option<Params> {
        match &self.kind {
            WidgetKind::ControlPoints {
                ul_robot,
                br_robot,
                base_size,
            } => {
                let ul = poses.get(ul_robot)?.position();
                let br = poses.get(br_robot)?.position();
                let s = image_state_from_anchors(ul, br, *base_size).ok()?;
                Some(Params::from([
                    ("scale".into(), s.scale),
                    ("tx".into(), s.translation.x),
                    ("ty".into(), s.translation.y),
                ]))
            }
            WidgetKind::Slider { robot, track } => Some(Params::from([(
                "value".into(),
                slider_param(poses.get(robot)?, *track),
            )])),
            WidgetKind::Knob { robot, range, .. } => Some(Params::from([(
                "value".into(),
                knob_param(poses.get(robot)?.theta, range),
            )])),
            WidgetKind::Button { robot, trigger, radius } => {
                let prev = if previous.get("pressed").copied().unwrap_or(0.0) > 0.5 {
                    ButtonState::Pressed
                } else {
                    ButtonState::Released
                };
                let state = button_state(poses.get(robot)?, *trigger, *radius, prev);
                Some(Params::from([(
                    "pressed".into(),
                    if state == ButtonState::Pressed { 1.0 } else { 0.0 },
                )]))
            }
        }
    }

    /// Robot goals that realize `params` physically.
    pub fn goals(&self, params: &Params, tolerance: f64, priority: i32) -> Vec<(String, GoalSpec)> {
        let goal = |target: Point| GoalSpec {
            target,
            target_heading: None,
            tolerance,
            priority,
        };
        let get = |k: &str| params.get(k).copied();
        match &self.kind {
            WidgetKind::ControlPoints {
                ul_robot,
                br_robot,
                base_size,
            } => {
                let (Some(scale), Some(tx), Some(ty)) = (get("scale"), get("tx"), get("ty")) else {
                    return Vec::new();
                };
                if !(scale > 0.0) {
                    return Vec::new();
                }
                let (ul, br) = anchors_from_image_state(Point::new(tx, ty), scale, *base_size);
                vec![(ul_robot.clone(), goal(ul)), (br_robot.clone(), goal(br))]
            }
            WidgetKind::Slider { robot, track } => match get("value") {
                Some(v) => vec![(robot.clone(), goal(slider_goal(v, *track)))],
                None => Vec::new(),
            },
            WidgetKind::Knob { robot, center, range } => match get("value") {
                Some(v) => vec![(robot.clone(), goal(*center).with_heading(knob_heading(v, range)))],
                None => Vec::new(),
            },
            WidgetKind::Button { robot, trigger, .. } => match get("pressed") {
                Some(p) if p > 0.5 => vec![(robot.clone(), goal(*trigger))],
                _ => Vec::new(),
            },
        }
    }
}
