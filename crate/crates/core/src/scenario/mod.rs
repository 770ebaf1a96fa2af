//! Scenario documents, deterministic runs, JSONL logs, replay and metrics.

pub mod bundled;
pub mod log;
pub mod metrics;
pub mod runner;
pub mod script;
pub mod spec;

pub use bundled::{bundled, list_scenarios, BUNDLED};
pub use log::{parse_log, replay, LogRecord, ReplayError, TickSnapshot};
pub use metrics::{
    compute_metrics, export_metrics, format_g6, parse_metrics_csv, ExportFormat, MetricsRow, RunMetrics,
};
pub use runner::{link_seed, run_scenario, Injection, RunError, RunOutput, Session};
pub use spec::{ConfigError, Overrides, ScenarioSpec, Side};
