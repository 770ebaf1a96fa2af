//! `telebots` command-line interface.

mod bridge;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use telebots::net::udp::{loopback_pair, Transport};
use telebots::scenario::{
    bundled, compute_metrics, export_metrics, link_seed, list_scenarios, parse_log, ExportFormat, Overrides, RunError,
    RunOutput, ScenarioSpec, Session, Side,
};

use bridge::BridgeServer;

#[derive(Parser)]
#[command(name = "telebots", version, about = "Two-room tabletop robot telepresence simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bundled scenario (d1..d4 or its id) or a scenario JSON file.
    Run(RunArgs),
    /// Recompute metrics from a JSONL log.
    Replay {
        log: PathBuf,
        /// Write metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics from one or more JSONL logs as CSV or JSON.
    Export {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the bundled scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    latency_ms: Option<f64>,
    #[arg(long)]
    jitter_ms: Option<f64>,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
    /// JSONL log destination. Defaults to `<scenario id>.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Carry messages over real UDP sockets on loopback, paced to the wall clock.
    #[arg(long)]
    live: bool,
    /// First of two UDP ports for live mode; 0 picks free ports.
    #[arg(long, default_value_t = 0)]
    udp_port: u16,
    /// Serve the operator console websocket on this port (implies wall-clock pacing).
    #[arg(long)]
    bridge_port: Option<u16>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            latency_ms: self.latency_ms,
            jitter_ms: self.jitter_ms,
            loss: self.loss,
            duration_s: self.duration_s,
        }
    }
}

fn load_scenario(name: &str) -> anyhow::Result<ScenarioSpec> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(ScenarioSpec::from_json(&text)?);
    }
    match bundled(name) {
        Some(spec) => Ok(spec),
        None => bail!("no scenario file or bundled scenario named {name:?}; see `telebots list-scenarios`"),
    }
}

fn write_or_print(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

/// Snapshots go to the console at most this often.
const BRIDGE_PERIOD: Duration = Duration::from_millis(33);

fn run_paced(mut session: Session, bridge: Option<&BridgeServer>) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let mut last_push = start - BRIDGE_PERIOD;
    while !session.is_done() {
        if let Some(b) = bridge {
            for inj in b.drain() {
                session.inject(inj);
            }
        }
        session.step()?;
        if let Some(b) = bridge {
            if last_push.elapsed() >= BRIDGE_PERIOD {
                if let Some(snap) = session.bridge_snapshot() {
                    b.broadcast(&snap);
                }
                last_push = Instant::now();
            }
        }
        let due = start + Duration::from_secs_f64(session.now());
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    Ok(session.finish())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let spec = load_scenario(&args.scenario)?.with_overrides(&args.overrides());
    let session = if args.live {
        let (to_local, to_remote) = loopback_pair(args.udp_port).context("opening UDP sockets")?;
        let link = |side| telebots::net::LinkModel {
            rng_seed: link_seed(spec.seed, side),
            ..spec.link
        };
        let links: [Box<dyn Transport + Send>; 2] = [
            Box::new(to_local.with_emulation(link(Side::Remote))),
            Box::new(to_remote.with_emulation(link(Side::Local))),
        ];
        Session::with_transports(spec, links)?
    } else {
        Session::new(spec)?
    };
    let id = session.spec().id.clone();
    let bridge = args.bridge_port.map(BridgeServer::start).transpose()?;
    if let Some(b) = &bridge {
        eprintln!("bridge listening on ws://{}", b.addr());
    }
    let output = if args.live || bridge.is_some() {
        run_paced(session, bridge.as_ref())?
    } else {
        session.run_to_end()?
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("{id}.jsonl")));
    fs::write(&out, &output.log).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("log written to {}", out.display());
    let mut json = serde_json::to_string_pretty(&output.metrics)?;
    json.push('\n');
    write_or_print(None, json.as_bytes())
}

fn replay(log: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let text = fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let records = parse_log(&text).with_context(|| format!("replaying {}", log.display()))?;
    let mut json = serde_json::to_string_pretty(&compute_metrics(&records))?;
    json.push('\n');
    write_or_print(out, json.as_bytes())
}

fn export(logs: &[PathBuf], format: ExportFormat, out: Option<&Path>) -> anyhow::Result<()> {
    let mut metrics = Vec::with_capacity(logs.len());
    for log in logs {
        let text = fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
        let records = parse_log(&text).with_context(|| format!("parsing {}", log.display()))?;
        metrics.push(compute_metrics(&records));
    }
    write_or_print(out, &export_metrics(&metrics, format))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Replay { log, out } => replay(&log, out.as_deref()),
        Command::Export { logs, format, out } => export(&logs, format, out.as_deref()),
        Command::ListScenarios => {
            let table: String = list_scenarios()
                .into_iter()
                .map(|(short, id, description)| format!("{short}\t{id}\t{description}\n"))
                .collect();
            write_or_print(None, table.as_bytes())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
