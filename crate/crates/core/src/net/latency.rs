//! Start latency: time from a triggering input to the first non-zero motor
//! command on the target robot.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("missing event: {0}")]
    MissingEvent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatencyEvent {
    Trigger { t: f64, label: String },
    Command { t: f64, robot_id: String, moving: bool },
}

pub fn measure_start_latency(
    events: &[LatencyEvent],
    trigger_label: &str,
    robot_id: &str,
) -> Result<f64, LatencyError> {
    let trigger_t = events
        .iter()
        .find_map(|e| match e {
            LatencyEvent::Trigger { t, label } if label == trigger_label => Some(*t),
            _ => None,
        })
        .ok_or_else(|| LatencyError::MissingEvent(format!("trigger {trigger_label:?}")))?;
    let motion_t = events
        .iter()
        .find_map(|e| match e {
            LatencyEvent::Command {
                t,
                robot_id: id,
                moving: true,
            } if id == robot_id && *t >= trigger_t => Some(*t),
            _ => None,
        })
        .ok_or_else(|| LatencyError::MissingEvent(format!("first motion of {robot_id:?}")))?;
    Ok(motion_t - trigger_t)
}
