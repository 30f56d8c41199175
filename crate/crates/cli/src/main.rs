use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use qec_memory::model::FilterMode;
use qec_memory::sweep::Range;
use qecmem_cli::{run_experiment, ExperimentSpec, FileConfig, Kind, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Steady,
    SweepFidelity,
    SweepSqueezed,
    Trajectory,
    Validate,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Steady => Kind::Steady,
            KindArg::SweepFidelity => Kind::SweepFidelity,
            KindArg::SweepSqueezed => Kind::SweepSqueezed,
            KindArg::Trajectory => Kind::Trajectory,
            KindArg::Validate => Kind::Validate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    S1,
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Syndrome-filtered LQG feedback for a three-mode quantum memory.
#[derive(Debug, Parser)]
#[command(name = "qecmem", version)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    kind: KindArg,
    /// TOML file with default values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ancilla squeezing, `start:stop:count` or a single value.
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<Range>,
    /// Source squeezing.
    #[arg(long, allow_hyphen_values = true)]
    mu1: Option<Range>,
    /// Control strength `-log2 r` for the fidelity sweep.
    #[arg(long, allow_hyphen_values = true)]
    log2r: Option<Range>,
    /// Control penalty.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_enum)]
    filter: Option<FilterArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Monte Carlo ensemble size for `validate`.
    #[arg(long)]
    ntraj: Option<usize>,
    /// Output file, or directory for `trajectory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feedback setting for `trajectory`; repeat for both.
    #[arg(long, value_enum)]
    control: Vec<Switch>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("qecmem: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        mu: cli.mu,
        mu1: cli.mu1,
        log2r: cli.log2r,
        r: cli.r,
        filter: cli.filter.map(|f| match f {
            FilterArg::S1 => FilterMode::S1,
            FilterArg::S2 => FilterMode::S2,
        }),
        seed: cli.seed,
        dt: cli.dt,
        duration: cli.duration,
        ntraj: cli.ntraj,
        out: cli.out,
        control: cli.control.iter().map(|&c| c == Switch::On).collect(),
    };
    let spec = match ExperimentSpec::resolve(cli.kind.into(), &file, &overrides) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("qecmem: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&spec) {
        Ok(summary) => {
            for line in &summary.messages {
                println!("{line}");
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("qecmem: {} failed: {e}", spec.kind);
            ExitCode::FAILURE
        }
    }
}
