//! Command-line front end: `convergence`, `sweep`, `single` and
//! `default-config`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdhp::harness::{self, ExperimentConfig};
use mdhp::{Error, Result};

#[derive(Parser)]
#[command(name = "mdhp", version, about = "Hybrid precoding by constant-modulus matrix decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Error and threshold traces of both threshold modes on one channel.
    Convergence(Common),
    /// Monte-Carlo rate sweep over the SNR grid.
    Sweep(Common),
    /// Design one link and dump its factors and rates as JSON.
    Single {
        #[command(flatten)]
        common: Common,
        /// SNR in dB; defaults to the last grid point.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
    },
    /// Print a built-in config as TOML.
    DefaultConfig {
        #[arg(value_enum, default_value_t = Preset::Sweep)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Sweep,
    Convergence,
    Mmwave,
}

fn load(common: &Common, fallback: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => fallback,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convergence(common) => {
            let cfg = load(&common, ExperimentConfig::convergence_default())?;
            let report = harness::run_convergence(&cfg)?;
            prepare_out(&common.out)?;
            harness::write_text(&common.out.join("convergence.csv"), &harness::convergence_csv(&report))?;
            harness::write_text(&common.out.join("phase_trace.csv"), &harness::phase_trace_csv(&report))?;
            for (name, t) in [("adaptive", &report.adaptive), ("constant", &report.constant)] {
                println!(
                    "{name}: iterations={} final_eps={:.6e} converged={}",
                    t.iterations, t.final_error, t.converged
                );
            }
        }
        Command::Sweep(common) => {
            let cfg = load(&common, ExperimentConfig::default())?;
            let records = with_threads(common.threads, || harness::run_sweep(&cfg))?;
            prepare_out(&common.out)?;
            let path = common.out.join("sweep.csv");
            harness::emit_csv(&records, &path)?;
            let failures: usize = records.iter().map(|r| r.failures).sum();
            let violations: usize = records.iter().map(|r| r.bound_violations).sum();
            println!(
                "wrote {} ({} rows, {failures} failed evaluations, {violations} bound violations)",
                path.display(),
                records.len()
            );
        }
        Command::Single { common, snr_db } => {
            let cfg = load(&common, ExperimentConfig::default())?;
            let snr = snr_db.unwrap_or(*cfg.snr_grid_db.last().expect("validated grid"));
            if !snr.is_finite() {
                return Err(Error::InvalidInput("snr-db must be finite".into()));
            }
            let report = harness::run_single(&cfg, snr)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            prepare_out(&common.out)?;
            let path = common.out.join("single.json");
            harness::write_text(&path, &json)?;
            println!(
                "achieved={:.6} upper_bound={:.6} -> {}",
                report.achieved,
                report.upper_bound,
                path.display()
            );
        }
        Command::DefaultConfig { preset } => {
            let cfg = match preset {
                Preset::Sweep => ExperimentConfig::default(),
                Preset::Convergence => ExperimentConfig::convergence_default(),
                Preset::Mmwave => ExperimentConfig::mmwave_default(),
            };
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
