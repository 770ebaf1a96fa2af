//! Piecewise-linear evaluation of timed waypoints.

use std::collections::BTreeMap;

use crate::coupling::{Finger, GrabState, HandPose};
use crate::geometry::{angle_diff_deg, Point, Pose2D};

use super::spec::{HandFrame, PointWaypoint, PoseWaypoint};

/// Index of the last entry with time `<= t`, or `None` before the first.
fn segment(times: impl Iterator<Item = f64>, t: f64) -> Option<usize> {
    let mut idx = None;
    for (i, ti) in times.enumerate() {
        if ti <= t {
            idx = Some(i);
        } else {
            break;
        }
    }
    idx
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

/// Clamped to the first and last waypoints outside their span. Headings
/// turn the short way round.
pub fn pose_at(wps: &[PoseWaypoint], t: f64) -> Pose2D {
    let i = segment(wps.iter().map(|w| w.t), t).unwrap_or(0);
    let a = wps[i];
    let Some(b) = wps.get(i + 1).filter(|_| t >= a.t) else {
        return Pose2D::new(a.x, a.y, a.theta);
    };
    let u = (t - a.t) / (b.t - a.t);
    Pose2D::new(
        lerp(a.x, b.x, u),
        lerp(a.y, b.y, u),
        a.theta + angle_diff_deg(b.theta, a.theta) * u,
    )
}

pub fn point_at(wps: &[PointWaypoint], t: f64) -> Point {
    let i = segment(wps.iter().map(|w| w.t), t).unwrap_or(0);
    let a = wps[i];
    let Some(b) = wps.get(i + 1).filter(|_| t >= a.t) else {
        return Point::new(a.x, a.y);
    };
    let u = (t - a.t) / (b.t - a.t);
    Point::new(lerp(a.x, b.x, u), lerp(a.y, b.y, u))
}

/// Fingers present in the current frame, interpolated toward the next
/// frame when they appear there too. `None` before the first frame.
pub fn hand_at(frames: &[HandFrame], t: f64) -> Option<HandPose> {
    let i = segment(frames.iter().map(|f| f.t), t)?;
    let a = &frames[i];
    let next = frames.get(i + 1);
    let fingers: BTreeMap<Finger, Point> = a
        .fingers
        .iter()
        .map(|(f, pa)| {
            let p = match next.and_then(|b| b.fingers.get(f).map(|pb| (b.t, pb))) {
                Some((tb, pb)) => {
                    let u = (t - a.t) / (tb - a.t);
                    Point::new(lerp(pa.x, pb.x, u), lerp(pa.y, pb.y, u))
                }
                None => *pa,
            };
            (*f, p)
        })
        .collect();
    Some(HandPose {
        timestamp: t,
        fingers,
        grab_state: match &a.pinching {
            Some(obj) => GrabState::Pinching(obj.clone()),
            None => GrabState::Open,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(t: f64, x: f64, y: f64) -> PointWaypoint {
        PointWaypoint { t, x, y }
    }

    #[test]
    fn points_interpolate_and_clamp() {
        let w = [wp(1.0, 0.0, 0.0), wp(3.0, 10.0, 20.0)];
        assert_eq!(point_at(&w, 0.0), Point::new(0.0, 0.0));
        assert_eq!(point_at(&w, 2.0), Point::new(5.0, 10.0));
        assert_eq!(point_at(&w, 9.0), Point::new(10.0, 20.0));
    }

    #[test]
    fn repeated_time_is_a_step() {
        let w = [wp(0.0, 0.0, 0.0), wp(1.0, 0.0, 0.0), wp(1.0, 30.0, 0.0)];
        assert_eq!(point_at(&w, 0.999), Point::new(0.0, 0.0));
        assert_eq!(point_at(&w, 1.0), Point::new(30.0, 0.0));
    }

    #[test]
    fn heading_takes_short_way() {
        let w = [
            PoseWaypoint {
                t: 0.0,
                x: 0.0,
                y: 0.0,
                theta: 350.0,
            },
            PoseWaypoint {
                t: 1.0,
                x: 0.0,
                y: 0.0,
                theta: 10.0,
            },
        ];
        assert!((pose_at(&w, 0.5).theta - 0.0).abs() < 1e-9);
    }

    #[test]
    fn hand_frames() {
        let frames = vec![
            HandFrame {
                t: 1.0,
                fingers: BTreeMap::from([
                    (Finger::Index, Point::new(0.0, 0.0)),
                    (Finger::Thumb, Point::new(5.0, 5.0)),
                ]),
                pinching: None,
            },
            HandFrame {
                t: 2.0,
                fingers: BTreeMap::from([(Finger::Index, Point::new(10.0, 0.0))]),
                pinching: Some("cup".into()),
            },
        ];
        assert!(hand_at(&frames, 0.5).is_none());
        let h = hand_at(&frames, 1.5).unwrap();
        assert_eq!(h.fingers[&Finger::Index], Point::new(5.0, 0.0));
        assert_eq!(h.fingers[&Finger::Thumb], Point::new(5.0, 5.0));
        let h = hand_at(&frames, 2.5).unwrap();
        assert_eq!(h.fingers.len(), 1);
        assert_eq!(h.grab_state, GrabState::Pinching("cup".into()));
    }
}
