//! `streambp` command-line harness.
//!
//! Exit codes: 0 on success, 2 for configuration or I/O errors, 3 for
//! numerical failures.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use streambp::experiments::{
    run_bench, run_bridge, run_kalman, run_study, summarize, Algo, BenchConfig, BridgeConfig,
    KalmanConfig, TrackerConfig,
};

use output::{Format, Table};

#[derive(Parser)]
#[command(
    name = "streambp",
    version,
    about = "Streaming Gaussian belief propagation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the engine against the Kalman filter on a linear model.
    Kalman(KalmanArgs),
    /// Covariance of a random walk conditioned to end at zero.
    Bridge(BridgeArgs),
    /// Divergence-time study of the runner tracker.
    Tracker(TrackerArgs),
    /// Filter throughput at several horizons.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    /// Write zeros for wall-clock fields so output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct KalmanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct BridgeArgs {
    #[command(flatten)]
    common: Common,
    /// Number of grid steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Final time.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Sbp,
    Smc,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Sbp => Algo::Sbp,
            AlgoArg::Smc => Algo::Smc,
        }
    }
}

#[derive(Args)]
struct TrackerArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    sims: Option<usize>,
    /// Number of time steps per simulation.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Smallest horizon; the others are 2x, 4x and 8x.
    #[arg(long)]
    steps: Option<usize>,
}

/// Run parameters of a tracker study.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StudyConfig {
    algo: Algo,
    particles: usize,
    sims: usize,
    seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Sbp,
            particles: 10,
            sims: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    kalman: KalmanConfig,
    bridge: BridgeConfig,
    tracker: TrackerConfig,
    study: StudyConfig,
    bench: BenchConfig,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<streambp::Error> for Failure {
    fn from(e: streambp::Error) -> Self {
        match e {
            streambp::Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn timing(ms: f64, common: &Common) -> f64 {
    if common.no_timing {
        0.0
    } else {
        ms
    }
}

fn kalman(args: KalmanArgs) -> CliResult<()> {
    let c = &args.common;
    let mut config = load_config(c.config.as_deref())?.kalman;
    config.steps = args.steps.unwrap_or(config.steps);
    config.dim = args.dim.unwrap_or(config.dim);
    config.seed = c.seed.unwrap_or(config.seed);
    let mut r = run_kalman(&config)?;
    r.kalman_ms = timing(r.kalman_ms, c);
    r.engine_ms = timing(r.engine_ms, c);
    let mut table = Table::new(&[
        "dim",
        "steps",
        "seed",
        "max_mean_diff",
        "max_cov_diff",
        "kalman_ms",
        "engine_ms",
        "max_live_nodes",
    ]);
    table.row(vec![
        r.dim.to_string(),
        r.steps.to_string(),
        r.seed.to_string(),
        output::float(r.max_mean_diff),
        output::float(r.max_cov_diff),
        output::float(r.kalman_ms),
        output::float(r.engine_ms),
        r.max_live_nodes.to_string(),
    ]);
    output::emit(c.format, c.out.as_deref(), &table, &json!(r))
}

fn bridge(args: BridgeArgs) -> CliResult<()> {
    let c = &args.common;
    let mut config = load_config(c.config.as_deref())?.bridge;
    config.n_steps = args.steps.unwrap_or(config.n_steps);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    let r = run_bridge(&config)?;
    let dt = r.horizon / r.n_steps as f64;
    let mut table = Table::new(&["i", "j", "s", "t", "cov", "expected"]);
    for (i, row) in r.cov.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (s, t) = ((i + 1) as f64 * dt, (j + 1) as f64 * dt);
            table.row(vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                output::float(s),
                output::float(t),
                output::float(v),
                output::float(streambp::experiments::bridge::bridge_covariance(
                    s, t, r.horizon,
                )),
            ]);
        }
    }
    output::emit(c.format, c.out.as_deref(), &table, &json!(r))
}

fn tracker(args: TrackerArgs) -> CliResult<()> {
    let c = &args.common;
    let file = load_config(c.config.as_deref())?;
    let mut config = file.tracker;
    let mut study = file.study;
    config.horizon = args.steps.unwrap_or(config.horizon);
    study.algo = args.algo.map(Algo::from).unwrap_or(study.algo);
    study.particles = args.particles.unwrap_or(study.particles);
    study.sims = args.sims.unwrap_or(study.sims);
    study.seed = c.seed.unwrap_or(study.seed);
    if study.particles == 0 {
        return Err(Failure::Config("particles must be at least 1".into()));
    }
    let mut runs = run_study(&config, study.algo, study.particles, study.sims, study.seed)?;
    for r in &mut runs {
        r.wallclock_ms = timing(r.wallclock_ms, c);
    }
    let summary = summarize(&runs);
    let mut table = Table::new(&[
        "sim",
        "seed",
        "algo",
        "particles",
        "divergence_step",
        "wallclock_ms",
    ]);
    for r in &runs {
        table.row(vec![
            r.sim.to_string(),
            r.seed.to_string(),
            r.algo.name().to_string(),
            r.particles.to_string(),
            r.divergence_step.to_string(),
            output::float(r.wallclock_ms),
        ]);
    }
    if c.format == Format::Csv {
        eprintln!(
            "{}@{} over {} sims: min {} q25 {} median {} q75 {} max {}",
            summary.algo.name(),
            summary.particles,
            summary.sims,
            summary.min,
            summary.q25,
            summary.median,
            summary.q75,
            summary.max
        );
    }
    let value = json!({ "config": config, "runs": runs, "summary": summary });
    output::emit(c.format, c.out.as_deref(), &table, &value)
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let c = &args.common;
    let mut config = load_config(c.config.as_deref())?.bench;
    if let Some(s) = args.steps {
        config.horizons = vec![s, 2 * s, 4 * s, 8 * s];
    }
    config.seed = c.seed.unwrap_or(config.seed);
    let mut r = run_bench(&config)?;
    if c.no_timing {
        for p in &mut r.points {
            p.wallclock_ms = 0.0;
            p.steps_per_sec = 0.0;
        }
        r.loglog_slope = 0.0;
        r.loglog_r2 = 0.0;
    } else {
        eprintln!(
            "log-log slope {:.3}, R^2 {:.4}",
            r.loglog_slope, r.loglog_r2
        );
    }
    let mut table = Table::new(&["horizon", "observed", "steps_per_sec", "wallclock_ms"]);
    for p in &r.points {
        table.row(vec![
            p.horizon.to_string(),
            p.observed.to_string(),
            output::float(p.steps_per_sec),
            output::float(p.wallclock_ms),
        ]);
    }
    output::emit(c.format, c.out.as_deref(), &table, &json!(r))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Kalman(a) => kalman(a),
        Command::Bridge(a) => bridge(a),
        Command::Tracker(a) => tracker(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
