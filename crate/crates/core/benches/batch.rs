use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use telebots::batch::{evaluate_controllers, run_trials, ExecMode};
use telebots::geometry::{Point, Pose2D};
use telebots::robot::{GoalSpec, RobotSpec, RobotState};
use telebots::scenario::{bundled, Overrides};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn controllers(c: &mut Criterion) {
    let spec = RobotSpec::default();
    let mut group = c.benchmark_group("evaluate_controllers");
    for n in [64usize, 4096, 65_536] {
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                let f = i as f64;
                (
                    RobotState::new(
                        format!("r{i}"),
                        Pose2D::new((f * 0.37) % 55.0, (f * 0.11) % 55.0, (f * 13.0) % 360.0),
                    ),
                    GoalSpec::at(Point::new((f * 0.71) % 55.0, (f * 0.29) % 55.0), &spec),
                )
            })
            .collect();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &pairs, |b, pairs| {
                b.iter(|| evaluate_controllers(black_box(pairs), &spec, mode))
            });
        }
    }
    group.finish();
}

fn trials(c: &mut Criterion) {
    let spec = bundled("d1").unwrap();
    let overrides = Overrides {
        duration_s: Some(2.0),
        ..Overrides::default()
    };
    let seeds: Vec<u64> = (0..8).collect();
    let mut group = c.benchmark_group("run_trials");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new(name, seeds.len()), |b| {
            b.iter(|| run_trials(black_box(&spec), &overrides, &seeds, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, controllers, trials);
criterion_main!(benches);
