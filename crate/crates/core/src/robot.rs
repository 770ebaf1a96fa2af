//! Differential-drive robot model and the deadband go-to-goal controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, Point, Pose2D};

/// Heading error above which the controller turns in place before driving.
pub const ALIGN_THRESHOLD_DEG: f64 = 20.0;
/// Proportional heading gain while driving, in (deg/s) per degree.
pub const HEADING_GAIN: f64 = 4.0;
/// Heading tolerance applied when a goal specifies a target heading.
pub const HEADING_TOLERANCE_DEG: f64 = 5.0;
/// Backing up is preferred over a full turn when the goal is behind and this close.
pub const REVERSE_MAX_DISTANCE_CM: f64 = 3.0;
pub const REVERSE_MIN_ERROR_DEG: f64 = 160.0;
/// Tolerance used by miniature-body bindings.
pub const MINIATURE_BODY_TOLERANCE_CM: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("timestep {0} s must be positive")]
    InvalidTimestep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotSpec {
    pub footprint_cm: (f64, f64),
    pub height_cm: f64,
    /// Hardware ceiling for straight-line motion.
    pub max_linear_speed: f64,
    /// Operating cap applied to every command.
    pub cap_linear_speed: f64,
    pub max_angular_speed: f64,
    pub report_period_s: f64,
    pub goal_tolerance: f64,
    pub push_capacity_g: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            footprint_cm: (3.2, 3.2),
            height_cm: 2.5,
            max_linear_speed: 35.0,
            cap_linear_speed: 17.5,
            max_angular_speed: 1500.0,
            report_period_s: 0.010,
            goal_tolerance: 1.1,
            push_capacity_g: 32.0,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cap_linear_speed > 0.0 && self.cap_linear_speed <= self.max_linear_speed) {
            return Err(format!(
                "cap_linear_speed {} must be in (0, {}]",
                self.cap_linear_speed, self.max_linear_speed
            ));
        }
        if !(self.max_angular_speed > 0.0) {
            return Err("max_angular_speed must be positive".into());
        }
        if !(self.goal_tolerance > 0.0) {
            return Err("goal_tolerance must be positive".into());
        }
        if !(self.report_period_s > 0.0) {
            return Err("report_period_s must be positive".into());
        }
        if !(self.footprint_cm.0 > 0.0 && self.footprint_cm.1 > 0.0) {
            return Err("footprint must be positive".into());
        }
        Ok(())
    }

    /// Radius of the circle used for contact tests.
    pub fn contact_radius(&self) -> f64 {
        self.footprint_cm.0.max(self.footprint_cm.1) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorCommand {
    /// cm/s, positive forward.
    pub v: f64,
    /// deg/s, positive counter-clockwise.
    pub omega: f64,
}

impl MotorCommand {
    pub const STOP: MotorCommand = MotorCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.omega == 0.0
    }

    pub fn clamped(&self, spec: &RobotSpec) -> MotorCommand {
        MotorCommand {
            v: self.v.clamp(-spec.cap_linear_speed, spec.cap_linear_speed),
            omega: self.omega.clamp(-spec.max_angular_speed, spec.max_angular_speed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: String,
    pub pose: Pose2D,
    /// Last applied (clamped) command.
    #[serde(default)]
    pub velocity: MotorCommand,
    #[serde(default)]
    pub grabbed_by_local: bool,
}

impl RobotState {
    pub fn new(id: impl Into<String>, pose: Pose2D) -> Self {
        Self {
            id: id.into(),
            pose,
            velocity: MotorCommand::STOP,
            grabbed_by_local: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub target: Point,
    #[serde(default)]
    pub target_heading: Option<f64>,
    pub tolerance: f64,
    #[serde(default)]
    pub priority: i32,
}

impl GoalSpec {
    pub fn at(target: Point, spec: &RobotSpec) -> Self {
        Self {
            target,
            target_heading: None,
            tolerance: spec.goal_tolerance,
            priority: 0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_heading(mut self, heading: f64) -> Self {
        self.target_heading = Some(heading);
        self
    }
}

/// Advances `state` by exact unicycle integration of the clamped command.
pub fn step_kinematics(
    state: &RobotState,
    cmd: MotorCommand,
    dt: f64,
    spec: &RobotSpec,
) -> Result<RobotState, KinematicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(KinematicsError::InvalidTimestep(dt));
    }
    if !state.pose.is_finite() {
        return Err(KinematicsError::NonFiniteInput("pose"));
    }
    if !(cmd.v.is_finite() && cmd.omega.is_finite()) {
        return Err(KinematicsError::NonFiniteInput("command"));
    }
    let cmd = cmd.clamped(spec);
    let theta = state.pose.theta.to_radians();
    let omega = cmd.omega.to_radians();
    let turn = omega * dt;
    let (x, y) = if turn.abs() < 1e-12 {
        (
            state.pose.x + cmd.v * dt * theta.cos(),
            state.pose.y + cmd.v * dt * theta.sin(),
        )
    } else {
        let r = cmd.v / omega;
        (
            state.pose.x + r * ((theta + turn).sin() - theta.sin()),
            state.pose.y - r * ((theta + turn).cos() - theta.cos()),
        )
    };
    Ok(RobotState {
        id: state.id.clone(),
        pose: Pose2D::new(x, y, state.pose.theta + cmd.omega * dt),
        velocity: cmd,
        grabbed_by_local: state.grabbed_by_local,
    })
}

pub fn is_at_goal(state: &RobotState, goal: &GoalSpec) -> bool {
    if state.pose.position().distance(goal.target) > goal.tolerance {
        return false;
    }
    match goal.target_heading {
        Some(h) => angle_diff_deg(h, state.pose.theta).abs() <= HEADING_TOLERANCE_DEG,
        None => true,
    }
}

/// Rotate-then-drive controller with a stop deadband.
///
/// Returns `MotorCommand::STOP` exactly when [`is_at_goal`] holds.
pub fn goto_controller(state: &RobotState, goal: &GoalSpec, spec: &RobotSpec) -> MotorCommand {
    if is_at_goal(state, goal) {
        return MotorCommand::STOP;
    }
    let pos = state.pose.position();
    let to_goal = goal.target - pos;
    let distance = to_goal.norm();

    if distance <= goal.tolerance {
        // Position reached, only the heading is off.
        let h = goal
            .target_heading
            .expect("heading goal when position is inside tolerance");
        return turn_in_place(angle_diff_deg(h, state.pose.theta), spec);
    }

    let bearing = to_goal.y.atan2(to_goal.x).to_degrees();
    let error = angle_diff_deg(bearing, state.pose.theta);

    if error.abs() > REVERSE_MIN_ERROR_DEG && distance < REVERSE_MAX_DISTANCE_CM {
        let rear_error = angle_diff_deg(bearing, state.pose.theta + 180.0);
        return MotorCommand::new(-spec.cap_linear_speed, HEADING_GAIN * rear_error).clamped(spec);
    }
    if error.abs() > ALIGN_THRESHOLD_DEG {
        return turn_in_place(error, spec);
    }
    MotorCommand::new(spec.cap_linear_speed, HEADING_GAIN * error).clamped(spec)
}

fn turn_in_place(error: f64, spec: &RobotSpec) -> MotorCommand {
    if error.abs() > ALIGN_THRESHOLD_DEG {
        MotorCommand::new(0.0, spec.max_angular_speed.copysign(error))
    } else {
        // Close to the heading: proportional, but never so slow that it stalls.
        let omega = (HEADING_GAIN * error).abs().max(HEADING_TOLERANCE_DEG * HEADING_GAIN);
        MotorCommand::new(0.0, omega.copysign(error)).clamped(spec)
    }
}

/// Rotation at full rate followed by straight driving at the cap.
pub fn time_to_reach_bound(distance: f64, initial_heading_error: f64, spec: &RobotSpec) -> f64 {
    initial_heading_error.abs() / spec.max_angular_speed
        + (distance - spec.goal_tolerance).max(0.0) / spec.cap_linear_speed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot(x: f64, y: f64, theta: f64) -> RobotState {
        RobotState::new("r", Pose2D::new(x, y, theta))
    }

    /// Small-step forward Euler integration, independent of the closed form.
    fn euler(state: &RobotState, cmd: MotorCommand, dt: f64) -> Pose2D {
        let steps = (dt / 1e-4).round() as usize;
        let h = dt / steps as f64;
        let (mut x, mut y, mut th) = (state.pose.x, state.pose.y, state.pose.theta.to_radians());
        for _ in 0..steps {
            x += cmd.v * th.cos() * h;
            y += cmd.v * th.sin() * h;
            th += cmd.omega.to_radians() * h;
        }
        Pose2D::new(x, y, th.to_degrees())
    }

    #[test]
    fn kinematics_examples() {
        let spec = RobotSpec::default();
        let s = step_kinematics(&robot(0.0, 0.0, 0.0), MotorCommand::new(10.0, 0.0), 1.0, &spec).unwrap();
        assert!((s.pose.x - 10.0).abs() < 1e-12 && s.pose.y.abs() < 1e-12);

        let s = step_kinematics(&robot(0.0, 0.0, 0.0), MotorCommand::new(0.0, 90.0), 1.0, &spec).unwrap();
        assert!((s.pose.theta - 90.0).abs() < 1e-12);
        assert_eq!(s.pose.position(), Point::new(0.0, 0.0));

        let start = robot(0.0, 0.0, 90.0);
        let cmd = MotorCommand::new(17.5, 0.0);
        let s = step_kinematics(&start, cmd, 2.0, &spec).unwrap();
        assert!(s.pose.x.abs() < 1e-9 && (s.pose.y - 35.0).abs() < 1e-9);
        let e = euler(&start, cmd, 2.0);
        assert!(s.pose.position().distance(e.position()) < 1e-3);
    }

    #[test]
    fn kinematics_arc_matches_euler() {
        let spec = RobotSpec::default();
        let start = robot(5.0, -2.0, 33.0);
        let cmd = MotorCommand::new(12.0, 75.0);
        let s = step_kinematics(&start, cmd, 1.0, &spec).unwrap();
        let e = euler(&start, cmd, 1.0);
        assert!(s.pose.position().distance(e.position()) < 1e-3);
    }

    #[test]
    fn kinematics_clamps_and_rejects() {
        let spec = RobotSpec::default();
        let s = step_kinematics(&robot(0.0, 0.0, 0.0), MotorCommand::new(100.0, -5000.0), 0.01, &spec).unwrap();
        assert_eq!(s.velocity, MotorCommand::new(17.5, -1500.0));
        assert!(step_kinematics(&robot(0.0, 0.0, 0.0), MotorCommand::STOP, 0.0, &spec).is_err());
        assert_eq!(
            step_kinematics(&robot(f64::NAN, 0.0, 0.0), MotorCommand::STOP, 0.01, &spec),
            Err(KinematicsError::NonFiniteInput("pose"))
        );
    }

    #[test]
    fn controller_examples() {
        let spec = RobotSpec::default();
        let r = robot(0.0, 0.0, 0.0);
        let inside = GoalSpec::at(Point::new(1.0, 0.0), &spec);
        assert_eq!(goto_controller(&r, &inside, &spec), MotorCommand::STOP);

        let ahead = GoalSpec::at(Point::new(10.0, 0.0), &spec);
        let cmd = goto_controller(&r, &ahead, &spec);
        assert_eq!(cmd.v, 17.5);
        assert!(cmd.omega.abs() < 1e-9);

        let behind = GoalSpec::at(Point::new(-10.0, 0.0), &spec);
        let cmd = goto_controller(&r, &behind, &spec);
        assert_eq!(cmd.v, 0.0);
        assert_eq!(cmd.omega.abs(), 1500.0);
    }

    #[test]
    fn controller_backs_up_to_close_goal_behind() {
        let spec = RobotSpec::default();
        let cmd = goto_controller(
            &robot(0.0, 0.0, 0.0),
            &GoalSpec::at(Point::new(-2.0, 0.0), &spec),
            &spec,
        );
        assert_eq!(cmd.v, -17.5);
    }

    #[test]
    fn controller_turns_to_target_heading() {
        let spec = RobotSpec::default();
        let goal = GoalSpec::at(Point::new(0.0, 0.0), &spec).with_heading(90.0);
        let mut s = robot(0.0, 0.0, 0.0);
        for _ in 0..200 {
            let cmd = goto_controller(&s, &goal, &spec);
            if cmd.is_zero() {
                break;
            }
            assert_eq!(cmd.v, 0.0);
            s = step_kinematics(&s, cmd, 0.005, &spec).unwrap();
        }
        assert!(is_at_goal(&s, &goal));
    }

    #[test]
    fn at_goal_boundaries() {
        let spec = RobotSpec::default();
        let goal = |d: f64| GoalSpec::at(Point::new(d, 0.0), &spec);
        assert!(is_at_goal(&robot(0.0, 0.0, 0.0), &goal(1.09)));
        assert!(is_at_goal(&robot(0.0, 0.0, 0.0), &goal(0.0)));
        assert!(!is_at_goal(&robot(0.0, 0.0, 0.0), &goal(1.11)));
        let heading = goal(0.0).with_heading(10.0);
        assert!(!is_at_goal(&robot(0.0, 0.0, 0.0), &heading));
        assert!(is_at_goal(&robot(0.0, 0.0, 6.0), &heading));
    }

    #[test]
    fn reach_bound_examples() {
        let spec = RobotSpec::default();
        assert!((time_to_reach_bound(10.0, 0.0, &spec) - 8.9 / 17.5).abs() < 1e-12);
        assert!((time_to_reach_bound(10.0, 0.0, &spec) - 0.5086).abs() < 1e-4);
        assert_eq!(time_to_reach_bound(0.0, 0.0, &spec), 0.0);
        assert!((time_to_reach_bound(0.0, 180.0, &spec) - 0.12).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(RobotSpec::default().validate().is_ok());
        let bad = RobotSpec {
            cap_linear_speed: 40.0,
            ..RobotSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
