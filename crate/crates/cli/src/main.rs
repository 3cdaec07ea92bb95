use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msms_cli::commands::{self, EstimateSource};
use msms_cli::config::{Config, Mode, Overrides};
use msms_cli::CliError;
use msms_core::metrics::OspaParams;

/// Multi-scan multi-sensor GLMB tracking: simulate, track, evaluate, stats.
#[derive(Parser)]
#[command(name = "msms", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured scan count.
    #[arg(long, global = true)]
    scans: Option<usize>,
    /// Overrides the configured sensor count.
    #[arg(long, global = true)]
    sensors: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Writes truth.csv and measurements.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes posterior.json and estimates.csv.
    Track {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Overrides the configured smoothing switch.
        #[arg(long, value_enum)]
        smooth: Option<Switch>,
    },
    /// Writes errors.csv with per-scan OSPA and OSPA².
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        /// Estimate files; each one's method is named after its directory.
        #[arg(long, num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long, default_value_t = 100.0)]
        cutoff: f64,
        #[arg(long, default_value_t = 1.0)]
        order: f64,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes stats.csv with the posterior's cardinality, birth, death and
    /// length distributions.
    Stats {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &PathBuf, g: &Global) -> Result<Config, CliError> {
    let mut cfg = Config::load(path)?;
    cfg.apply(&Overrides {
        seed: g.seed,
        scans: g.scans,
        sensors: g.sensors,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { config, out } => commands::simulate(&load(&config, g)?, &out),
        Command::Track {
            config,
            measurements,
            out,
            mode,
            smooth,
        } => {
            let mut cfg = load(&config, g)?;
            if let Some(m) = mode {
                cfg.tracker.mode = m;
            }
            if let Some(s) = smooth {
                cfg.tracker.smooth = matches!(s, Switch::On);
            }
            commands::track(&cfg, &measurements, &out)
        }
        Command::Evaluate {
            truth,
            estimates,
            cutoff,
            order,
            window,
            out,
        } => {
            let params = OspaParams::new(cutoff, order, window)?;
            let sources: Vec<EstimateSource> = estimates.into_iter().map(EstimateSource::from_path).collect();
            commands::evaluate(&truth, &sources, &params, g.scans, &out)
        }
        Command::Stats { posterior, out } => commands::stats(&posterior, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.global.threads;
    let result = match threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))
            .and_then(|pool| pool.install(|| run(cli))),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msms: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
