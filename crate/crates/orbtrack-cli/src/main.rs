//! `orbtrack`: command-line driver for Monte Carlo tracking batches, the
//! uncertainty-propagation and particle-depletion studies, and the
//! estimation-bound series. Every command is deterministic for a fixed
//! scenario and seed; artifacts are written under `--out`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use orbtrack_core::runner;
use orbtrack_core::scenario::{resolve_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "orbtrack", version, about = "Orbit tracking batches, studies, and bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyKind {
    /// Propagate a prior ensemble and cluster it into a Gaussian mixture.
    Propagation,
    /// Evaluate the particle-retention lower bound against Monte Carlo.
    Depletion,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo tracking batch and write per-run logs, the
    /// estimation bound, and the consistency report.
    Run {
        /// Preset name (case1, case2, prop-high, prop-low) or a scenario
        /// JSON file.
        #[arg(long)]
        scenario: String,
        /// Override the number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the standalone studies.
    Study {
        #[arg(long, value_enum)]
        kind: StudyKind,
        /// Preset name or scenario JSON file.
        #[arg(long)]
        scenario: String,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Samples per configuration (ensemble size for propagation,
        /// Monte Carlo draws per sweep row for depletion).
        #[arg(long)]
        samples: Option<usize>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute only the estimation-bound series for a scenario.
    Pcrb {
        /// Preset name or scenario JSON file.
        #[arg(long)]
        scenario: String,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of truth draws in the expectation.
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in preset as JSON, ready to edit and pass back via
    /// --scenario.
    Preset {
        /// One of: case1, case2, prop-high, prop-low.
        name: String,
    },
}

fn load(scenario: &str, seed: Option<u64>) -> Result<ScenarioConfig, orbtrack_core::Error> {
    let mut config = resolve_scenario(scenario)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, runs, seed, out } => {
            let mut config = load(&scenario, seed)?;
            if let Some(runs) = runs {
                config.runs = runs;
            }
            let summary = runner::run_batch(&config, &out)?;
            println!(
                "scenario {}: {}/{} runs succeeded over {} epochs",
                summary.scenario, summary.succeeded, summary.runs, summary.epochs
            );
            if let Some(fraction) = summary.nees_outside_fraction {
                println!(
                    "NEES: {} samples, outside-band fraction {fraction}",
                    summary.nees_count
                );
            }
            println!(
                "mode transitions: {} to ensemble, {} to Gaussian",
                summary.to_ensemble_transitions, summary.to_gaussian_transitions
            );
            for failure in &summary.failed {
                eprintln!("run {} failed: {}", failure.index, failure.error);
            }
            println!("artifacts written to {}", out.display());
        }
        Command::Study { kind: StudyKind::Propagation, scenario, seed, samples, out } => {
            let mut config = load(&scenario, seed)?;
            if let Some(samples) = samples {
                config.study_samples = samples;
            }
            let summary = runner::run_propagation_study(&config, &out)?;
            for snap in &summary.snapshots {
                println!("t={} s: {} mixture component(s)", snap.t, snap.components);
            }
            println!("artifacts written to {}", out.display());
        }
        Command::Study { kind: StudyKind::Depletion, scenario, seed, samples, out } => {
            let config = load(&scenario, seed)?;
            let samples = samples.unwrap_or(10_000);
            let summary = runner::run_depletion_study(&config, &out, samples)?;
            println!(
                "reference period {} s, {} samples per row",
                summary.period, summary.samples_per_row
            );
            for row in &summary.rows {
                println!(
                    "sigma_pos={} km sigma_vel={} km/s ln(b/peak)={}: bound={} empirical={} holds={}",
                    row.sigma_pos_km,
                    row.sigma_vel_kms,
                    row.ln_threshold_ratio,
                    row.lower_bound,
                    row.empirical,
                    row.holds
                );
            }
            println!(
                "guarantee {} on all rows; artifacts written to {}",
                if summary.all_hold { "holds" } else { "VIOLATED" },
                out.display()
            );
        }
        Command::Pcrb { scenario, seed, runs, out } => {
            let mut config = load(&scenario, seed)?;
            if let Some(runs) = runs {
                config.pcrb_runs = runs;
            }
            let summary = runner::run_pcrb(&config, &out)?;
            println!(
                "{} epochs, {} regularized; final position bound {} km^2",
                summary.epochs, summary.regularized_epochs, summary.final_position_bound
            );
            println!("artifacts written to {}", out.display());
        }
        Command::Preset { name } => {
            let config = ScenarioConfig::preset(&name).ok_or_else(|| {
                orbtrack_core::Error::Config(format!(
                    "unknown preset '{name}'; available: {}",
                    ScenarioConfig::preset_names().join(", ")
                ))
            })?;
            println!("{}", serde_json::to_string_pretty(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
