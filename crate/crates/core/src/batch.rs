//! Data-parallel helpers. With the `parallel` feature off every call runs
//! sequentially and gives the same results.

use crate::robot::{goto_controller, GoalSpec, MotorCommand, RobotSpec, RobotState};
use crate::scenario::{run_scenario, Overrides, RunError, RunOutput, ScenarioSpec};

/// Below this many robots a room's controllers run inline.
pub const PARALLEL_ROBOT_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether `Parallel` actually fans out in this build.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Order-preserving map.
pub fn map_items<T, R, F>(items: &[T], mode: ExecMode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Controller outputs for many (state, goal) pairs.
pub fn evaluate_controllers(pairs: &[(RobotState, GoalSpec)], spec: &RobotSpec, mode: ExecMode) -> Vec<MotorCommand> {
    map_items(pairs, mode, |(s, g)| goto_controller(s, g, spec))
}

/// One run per seed, in seed order.
pub fn run_trials(
    spec: &ScenarioSpec,
    base: &Overrides,
    seeds: &[u64],
    mode: ExecMode,
) -> Vec<Result<RunOutput, RunError>> {
    map_items(seeds, mode, |&seed| {
        run_scenario(
            spec,
            &Overrides {
                seed: Some(seed),
                ..*base
            },
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Pose2D};

    #[test]
    fn modes_agree() {
        let spec = RobotSpec::default();
        let pairs: Vec<(RobotState, GoalSpec)> = (0..200)
            .map(|i| {
                let f = i as f64;
                (
                    RobotState::new(format!("r{i}"), Pose2D::new(f * 0.1, 5.0, f * 7.0)),
                    GoalSpec::at(Point::new(20.0, f * 0.2), &spec),
                )
            })
            .collect();
        assert_eq!(
            evaluate_controllers(&pairs, &spec, ExecMode::Sequential),
            evaluate_controllers(&pairs, &spec, ExecMode::Parallel)
        );
    }
}
