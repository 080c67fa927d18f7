//! Batch drivers: Monte Carlo tracking runs with consistency evaluation,
//! the mixture propagation study, the depletion-bound sweep, and the
//! standalone estimation-bound series. Every driver writes deterministic
//! artifacts (CSV time series, JSON summaries) under an output directory;
//! the same config and master seed reproduce the files byte for byte.

use std::fs;
use std::path::Path;

use nalgebra::Vector6;
use serde::Serialize;

use crate::consistency::{
    self, ConsistencyReport, PcrbSeries, RunSeries, NEES_BAND_LOWER, NEES_BAND_UPPER,
};
use crate::depletion::{self, DepletionConfig};
use crate::dynamics::propagate_with_noise;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gmm::{self, FitConfig};
use crate::hybrid::{HybridTracker, ModeTransition, TrackerKind, TrackerMode};
use crate::scenario::{run_rng, RngChannel, ScenarioConfig, TrackerChoice};
use crate::state::StateVector;

/// Run index reserved for the bound computation and the studies; tracker
/// runs are numbered from 1 so their noise streams never overlap it.
pub const RESERVED_RUN_INDEX: u64 = 0;

/// One logged decision epoch of a tracking run.
#[derive(Clone, Debug)]
pub struct EpochRow {
    pub t: f64,
    pub truth: Vector6<f64>,
    pub estimate: Vector6<f64>,
    /// Diagonal of the reported covariance.
    pub variance: Vector6<f64>,
    pub mode: TrackerMode,
    pub measured: bool,
}

/// Everything a single run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub index: u64,
    pub rows: Vec<EpochRow>,
    /// (t, β) at every measured epoch.
    pub nees: Vec<(f64, f64)>,
    pub to_ensemble: usize,
    pub to_gaussian: usize,
    /// Divergence message if the run aborted early; rows up to the failing
    /// epoch are kept.
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Simulate one truth trajectory and track it. The four noise sources run
/// on separate generator streams seeded from (master_seed, run_index), so
/// the truth, the sensor, and the tracker cannot perturb each other, and
/// every run is reproducible in isolation.
pub fn simulate_run(config: &ScenarioConfig, env: &Environment, run_index: u64) -> RunOutcome {
    let mut outcome = RunOutcome {
        index: run_index,
        rows: Vec::new(),
        nees: Vec::new(),
        to_ensemble: 0,
        to_gaussian: 0,
        error: None,
    };
    let master = config.master_seed;
    let mut rng_truth = run_rng(master, run_index, RngChannel::TruthProcess);
    let mut rng_sensor = run_rng(master, run_index, RngChannel::Sensor);
    let mut rng_tracker = run_rng(master, run_index, RngChannel::Tracker);
    let mut rng_init = run_rng(master, run_index, RngChannel::TruthInit);

    let kind = match config.tracker {
        TrackerChoice::Hybrid => TrackerKind::Hybrid,
        TrackerChoice::Ukf => TrackerKind::UkfOnly,
    };
    let prior = config.initial_belief();
    let grid = config.epoch_grid();

    let result = (|| -> Result<()> {
        let mut truth = StateVector::from_vector(&prior.sample(&mut rng_init)?);
        let mut tracker =
            HybridTracker::new(kind, config.ut(), config.particle_count, prior.clone(), grid[0])?;
        outcome.rows.push(EpochRow {
            t: grid[0],
            truth: truth.to_vector(),
            estimate: prior.mean,
            variance: prior.covariance.diagonal(),
            mode: TrackerMode::Gaussian,
            measured: false,
        });
        for w in grid.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            truth = propagate_with_noise(
                &truth,
                t0,
                t1,
                env.int_dt,
                &env.constants,
                &env.drag,
                &env.process_noise,
                &mut rng_truth,
            )
            .map_err(|e| e.with_epoch(t1))?;
            let z = env.observation.generate_measurement(&truth, t1, &mut rng_sensor)?;
            let record = tracker.step(t1, z.as_ref(), env, &mut rng_tracker)?;
            for transition in &record.transitions {
                match transition {
                    ModeTransition::GaussianToEnsemble => outcome.to_ensemble += 1,
                    ModeTransition::EnsembleToGaussian => outcome.to_gaussian += 1,
                }
            }
            if record.measured {
                outcome.nees.push((t1, consistency::nees(&truth, &record.estimate)?));
            }
            outcome.rows.push(EpochRow {
                t: t1,
                truth: truth.to_vector(),
                estimate: record.estimate.mean,
                variance: record.estimate.covariance.diagonal(),
                mode: record.mode,
                measured: record.measured,
            });
        }
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
    }
    outcome
}

/// A failed run in the batch summary.
#[derive(Clone, Debug, Serialize)]
pub struct FailedRun {
    pub index: u64,
    pub error: String,
}

/// Batch-level summary, also written as `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub scenario: String,
    pub tracker: String,
    pub master_seed: u64,
    pub runs: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedRun>,
    pub epochs: usize,
    pub measured_epochs: usize,
    pub to_ensemble_transitions: usize,
    pub to_gaussian_transitions: usize,
    pub nees_count: usize,
    pub nees_mean: Option<f64>,
    pub nees_outside_fraction: Option<f64>,
    pub max_spectral_norm: Option<f64>,
    pub min_lambda_min: Option<f64>,
    pub pcrb_regularized_epochs: usize,
    /// Runs that completed every epoch and entered the error statistics.
    pub complete_runs: usize,
}

fn float_field(v: f64) -> String {
    format!("{v}")
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

const RUN_HEADER: [&str; 21] = [
    "t", "truth_x", "truth_y", "truth_z", "truth_vx", "truth_vy", "truth_vz", "est_x", "est_y",
    "est_z", "est_vx", "est_vy", "est_vz", "var_x", "var_y", "var_z", "var_vx", "var_vy",
    "var_vz", "mode", "measured",
];

fn write_run_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    write_csv(
        path,
        &RUN_HEADER,
        rows.iter().map(|r| {
            let mut record = Vec::with_capacity(RUN_HEADER.len());
            record.push(float_field(r.t));
            record.extend(r.truth.iter().map(|v| float_field(*v)));
            record.extend(r.estimate.iter().map(|v| float_field(*v)));
            record.extend(r.variance.iter().map(|v| float_field(*v)));
            record.push(r.mode.as_str().to_string());
            record.push(r.measured.to_string());
            record
        }),
    )
}

fn write_report_csv(path: &Path, report: Option<&ConsistencyReport>) -> Result<()> {
    let rows: Vec<Vec<String>> = report.map_or_else(Vec::new, |rep| {
        rep.times
            .iter()
            .zip(rep.spectral_norms.iter())
            .zip(rep.lambda_mins.iter())
            .map(|((t, s), l)| vec![float_field(*t), float_field(*s), float_field(*l)])
            .collect()
    });
    write_csv(path, &["t", "spec_norm", "lambda_min"], rows)
}

fn write_nees_csv(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    write_csv(
        path,
        &["t", "beta"],
        samples.iter().map(|(t, b)| vec![float_field(*t), float_field(*b)]),
    )
}

fn write_pcrb_csv(path: &Path, series: &PcrbSeries) -> Result<()> {
    write_csv(
        path,
        &[
            "t", "bound_x", "bound_y", "bound_z", "bound_vx", "bound_vy", "bound_vz",
            "regularized",
        ],
        series.times.iter().zip(series.bounds.iter()).zip(series.regularized.iter()).map(
            |((t, b), reg)| {
                let mut record = vec![float_field(*t)];
                record.extend(b.diagonal().iter().map(|v| float_field(*v)));
                record.push(reg.to_string());
                record
            },
        ),
    )
}

/// Re-parse an output CSV, checking the header and that every numeric
/// column holds finite floats. Returns the data-row count.
fn validate_csv(path: &Path, header: &[&str], numeric: &[usize]) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path)?;
    let got: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Config(format!(
            "self-validation: {} header mismatch: {got:?}",
            path.display()
        )));
    }
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        for &col in numeric {
            let field = record.get(col).unwrap_or("");
            let value: f64 = field.parse().map_err(|_| {
                Error::Config(format!(
                    "self-validation: {} row {rows} column {col} is not numeric: {field:?}",
                    path.display()
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Config(format!(
                    "self-validation: {} row {rows} column {col} is not finite",
                    path.display()
                )));
            }
        }
        rows += 1;
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Execute a Monte Carlo batch: the estimation bound once, `config.runs`
/// tracker runs, then the consistency report over the completed runs.
/// Writes `run_<i>.csv` (i = 1..=runs), `pcrb.csv`, `report.csv`,
/// `nees.csv`, and `summary.json` under `out_dir`, then re-parses every
/// CSV as a self-check. Fails only if no run succeeds.
pub fn run_batch(config: &ScenarioConfig, out_dir: &Path) -> Result<BatchSummary> {
    config.validate()?;
    let env = config.environment()?;
    fs::create_dir_all(out_dir)?;
    let grid = config.epoch_grid();

    let mut rng_pcrb = run_rng(config.master_seed, RESERVED_RUN_INDEX, RngChannel::TruthProcess);
    let pcrb = consistency::pcrb_series(
        &config.initial_belief(),
        &grid,
        &env,
        config.pcrb_runs,
        &mut rng_pcrb,
    )?;
    write_pcrb_csv(&out_dir.join("pcrb.csv"), &pcrb)?;

    let mut outcomes = Vec::with_capacity(config.runs);
    for index in 1..=config.runs as u64 {
        let outcome = simulate_run(config, &env, index);
        write_run_csv(&out_dir.join(format!("run_{index}.csv")), &outcome.rows)?;
        outcomes.push(outcome);
    }
    let succeeded: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.succeeded()).collect();
    if succeeded.is_empty() {
        let first = outcomes[0].error.clone().unwrap_or_default();
        return Err(Error::Numerical(format!(
            "all {} runs failed; first error: {first}",
            config.runs
        )));
    }

    // NEES pooled over successful runs, run-major then time-major.
    let nees_samples: Vec<(f64, f64)> =
        succeeded.iter().flat_map(|o| o.nees.iter().copied()).collect();
    write_nees_csv(&out_dir.join("nees.csv"), &nees_samples)?;

    // Error statistics need at least two runs that covered every epoch.
    let complete: Vec<RunSeries> = succeeded
        .iter()
        .filter(|o| o.rows.len() == grid.len())
        .map(|o| RunSeries {
            times: o.rows.iter().map(|r| r.t).collect(),
            truths: o.rows.iter().map(|r| r.truth).collect(),
            estimates: o.rows.iter().map(|r| r.estimate).collect(),
        })
        .collect();
    let report = if complete.len() >= 2 {
        let rmse = consistency::rmse_matrix_series(&complete)?;
        Some(consistency::consistency_report(&grid, &rmse, &pcrb.bounds, &nees_samples)?)
    } else {
        None
    };
    write_report_csv(&out_dir.join("report.csv"), report.as_ref())?;

    let nees_mean = (!nees_samples.is_empty())
        .then(|| nees_samples.iter().map(|(_, b)| b).sum::<f64>() / nees_samples.len() as f64);
    let outside = (!nees_samples.is_empty()).then(|| {
        let outside = nees_samples
            .iter()
            .filter(|(_, b)| *b < NEES_BAND_LOWER || *b > NEES_BAND_UPPER)
            .count();
        outside as f64 / nees_samples.len() as f64
    });
    let summary = BatchSummary {
        scenario: config.name.clone(),
        tracker: match config.tracker {
            TrackerChoice::Hybrid => "hybrid".into(),
            TrackerChoice::Ukf => "ukf".into(),
        },
        master_seed: config.master_seed,
        runs: config.runs,
        succeeded: succeeded.len(),
        failed: outcomes
            .iter()
            .filter_map(|o| {
                o.error.as_ref().map(|e| FailedRun { index: o.index, error: e.clone() })
            })
            .collect(),
        epochs: grid.len(),
        measured_epochs: succeeded
            .iter()
            .map(|o| o.rows.iter().filter(|r| r.measured).count())
            .sum(),
        to_ensemble_transitions: succeeded.iter().map(|o| o.to_ensemble).sum(),
        to_gaussian_transitions: succeeded.iter().map(|o| o.to_gaussian).sum(),
        nees_count: nees_samples.len(),
        nees_mean,
        nees_outside_fraction: outside,
        max_spectral_norm: report
            .as_ref()
            .map(|r| r.spectral_norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        min_lambda_min: report
            .as_ref()
            .map(|r| r.lambda_mins.iter().cloned().fold(f64::INFINITY, f64::min)),
        pcrb_regularized_epochs: pcrb.regularized.iter().filter(|r| **r).count(),
        complete_runs: complete.len(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;

    // Self-validation: every CSV parses back with the documented schema.
    for outcome in &outcomes {
        let path = out_dir.join(format!("run_{}.csv", outcome.index));
        let numeric: Vec<usize> = (0..19).collect();
        let rows = validate_csv(&path, &RUN_HEADER, &numeric)?;
        if rows != outcome.rows.len() {
            return Err(Error::Config(format!(
                "self-validation: {} has {rows} rows, expected {}",
                path.display(),
                outcome.rows.len()
            )));
        }
    }
    validate_csv(&out_dir.join("report.csv"), &["t", "spec_norm", "lambda_min"], &[0, 1, 2])?;
    validate_csv(&out_dir.join("nees.csv"), &["t", "beta"], &[0, 1])?;
    Ok(summary)
}

/// Compute and write only the estimation-bound series (`pcrb.csv` plus a
/// small JSON summary).
#[derive(Clone, Debug, Serialize)]
pub struct PcrbSummary {
    pub scenario: String,
    pub master_seed: u64,
    pub pcrb_runs: usize,
    pub epochs: usize,
    pub regularized_epochs: usize,
    /// Bound on the position-error variance sum at the final epoch (km²).
    pub final_position_bound: f64,
}

pub fn run_pcrb(config: &ScenarioConfig, out_dir: &Path) -> Result<PcrbSummary> {
    config.validate()?;
    let env = config.environment()?;
    fs::create_dir_all(out_dir)?;
    let grid = config.epoch_grid();
    let mut rng = run_rng(config.master_seed, RESERVED_RUN_INDEX, RngChannel::TruthProcess);
    let series =
        consistency::pcrb_series(&config.initial_belief(), &grid, &env, config.pcrb_runs, &mut rng)?;
    write_pcrb_csv(&out_dir.join("pcrb.csv"), &series)?;
    let last = series.bounds.last().expect("non-empty grid");
    let summary = PcrbSummary {
        scenario: config.name.clone(),
        master_seed: config.master_seed,
        pcrb_runs: config.pcrb_runs,
        epochs: grid.len(),
        regularized_epochs: series.regularized.iter().filter(|r| **r).count(),
        final_position_bound: last.diagonal().fixed_rows::<3>(0).sum(),
    };
    write_json(&out_dir.join("pcrb.json"), &summary)?;
    Ok(summary)
}

/// Per-snapshot record of the propagation study.
#[derive(Clone, Debug, Serialize)]
pub struct StudySnapshotSummary {
    pub t: f64,
    /// Mixture components selected at this time.
    pub components: usize,
    pub message_length: f64,
    pub weights: Vec<f64>,
    pub position_traces_km2: Vec<f64>,
}

/// Propagation-study summary, also written as `study.json`.
#[derive(Clone, Debug, Serialize)]
pub struct StudySummary {
    pub scenario: String,
    pub master_seed: u64,
    pub samples: usize,
    pub snapshots: Vec<StudySnapshotSummary>,
}

/// Sample the prior, propagate the ensemble to each snapshot time, and fit
/// a minimum-message-length mixture to the position marginal. Writes
/// `study.csv` (one row per component per time, with the per-time mode
/// count) and `study.json`.
pub fn run_propagation_study(config: &ScenarioConfig, out_dir: &Path) -> Result<StudySummary> {
    config.validate()?;
    if config.study_times.is_empty() {
        return Err(Error::Config("study_times must list at least one snapshot time".into()));
    }
    let env = config.environment()?;
    fs::create_dir_all(out_dir)?;
    let mut rng = run_rng(config.master_seed, RESERVED_RUN_INDEX, RngChannel::Tracker);
    let snapshots = gmm::propagate_and_cluster_study(
        &config.initial_belief(),
        &config.study_times,
        config.study_samples,
        &FitConfig::default(),
        &env,
        &mut rng,
    )?;

    let mut summaries = Vec::with_capacity(snapshots.len());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for snap in &snapshots {
        let traces = gmm::position_trace_report(&snap.fit.mixture)?;
        let weights: Vec<f64> =
            snap.fit.mixture.components.iter().map(|c| c.weight).collect();
        for (i, (w, trace)) in weights.iter().zip(traces.iter()).enumerate() {
            rows.push(vec![
                float_field(snap.time),
                snap.fit.mixture.component_count().to_string(),
                i.to_string(),
                float_field(*w),
                float_field(*trace),
            ]);
        }
        summaries.push(StudySnapshotSummary {
            t: snap.time,
            components: snap.fit.mixture.component_count(),
            message_length: snap.fit.message_length,
            weights,
            position_traces_km2: traces,
        });
    }
    write_csv(
        &out_dir.join("study.csv"),
        &["t", "components", "component", "weight", "position_trace_km2"],
        rows,
    )?;
    let summary = StudySummary {
        scenario: config.name.clone(),
        master_seed: config.master_seed,
        samples: config.study_samples,
        snapshots: summaries,
    };
    write_json(&out_dir.join("study.json"), &summary)?;
    Ok(summary)
}

/// One row of the depletion-bound sweep.
#[derive(Clone, Debug, Serialize)]
pub struct DepletionRow {
    pub sigma_pos_km: f64,
    pub sigma_vel_kms: f64,
    /// ln(b / peak density) of the likelihood floor (negative).
    pub ln_threshold_ratio: f64,
    pub threshold: f64,
    pub n_radius: f64,
    pub m_radius: f64,
    pub lower_bound: f64,
    pub empirical: f64,
    pub retained: usize,
    pub failed_samples: usize,
    pub samples: usize,
    /// empirical − (bound − 2σ_binomial); the guarantee holds when ≥ 0.
    pub margin: f64,
    pub holds: bool,
}

/// Depletion-study summary, also written as `depletion.json`.
#[derive(Clone, Debug, Serialize)]
pub struct DepletionSummary {
    pub scenario: String,
    pub master_seed: u64,
    /// Orbital period of the reference state under the closed-orbit
    /// restriction (s).
    pub period: f64,
    pub samples_per_row: usize,
    pub rows: Vec<DepletionRow>,
    pub all_hold: bool,
}

/// (σ_pos km, σ_vel km/s, ln(b/peak)) sweep rows: three noise regimes
/// crossed with two likelihood floors, plus one tight showcase where the
/// bound itself is large.
pub const DEPLETION_SWEEP: [(f64, f64, f64); 7] = [
    (0.01, 0.001, -40.0),
    (0.01, 0.001, -150.0),
    (1.0, 0.01, -40.0),
    (1.0, 0.01, -150.0),
    (2.0, 0.2, -40.0),
    (2.0, 0.2, -150.0),
    (0.01, 0.00001, -150.0),
];

/// Evaluate the retention lower bound and its Monte Carlo estimate on the
/// scenario's reference state across [`DEPLETION_SWEEP`]. The analysis is
/// only defined for closed orbits, so the scenario's dynamics are
/// restricted to the point-mass, drag-free case regardless of its flags.
/// Writes `depletion.json`.
pub fn run_depletion_study(
    config: &ScenarioConfig,
    out_dir: &Path,
    samples: usize,
) -> Result<DepletionSummary> {
    config.validate()?;
    if samples == 0 {
        return Err(Error::Config("depletion study needs at least one sample".into()));
    }
    let mut env = config.environment()?;
    env.constants = env.constants.two_body();
    env.drag.area_to_mass = 0.0;
    fs::create_dir_all(out_dir)?;

    let reference = StateVector::from_vector(&Vector6::from_row_slice(&config.initial_mean));
    let period = depletion::verify_periodicity(&reference, &env)?;
    let peak = depletion::peak_density(&env.observation.noise_covariance())?;

    let mut rng = run_rng(config.master_seed, RESERVED_RUN_INDEX, RngChannel::Tracker);
    let mut rows = Vec::with_capacity(DEPLETION_SWEEP.len());
    for &(sigma_pos, sigma_vel, ln_ratio) in &DEPLETION_SWEEP {
        let mut sigmas = [sigma_pos; 6];
        sigmas[3..].fill(sigma_vel);
        let cloud = crate::state::GaussianBelief::from_std_devs(reference.to_vector(), sigmas);
        let dep_config = DepletionConfig {
            reference,
            cloud_cov: cloud.covariance,
            measurement_cov: env.observation.noise_covariance(),
            threshold: peak * ln_ratio.exp(),
        };
        let result = depletion::depletion_lower_bound(&dep_config, &env)?;
        let mc = depletion::monte_carlo_retention(&dep_config, &env, samples, &mut rng)?;
        let empirical = mc.fraction();
        let sigma_binomial = mc.binomial_sigma(result.lower_bound);
        let margin = empirical - (result.lower_bound - 2.0 * sigma_binomial);
        rows.push(DepletionRow {
            sigma_pos_km: sigma_pos,
            sigma_vel_kms: sigma_vel,
            ln_threshold_ratio: ln_ratio,
            threshold: dep_config.threshold,
            n_radius: result.n_radius,
            m_radius: result.m_radius,
            lower_bound: result.lower_bound,
            empirical,
            retained: mc.retained,
            failed_samples: mc.failed,
            samples: mc.samples,
            margin,
            holds: margin >= 0.0,
        });
    }
    let summary = DepletionSummary {
        scenario: config.name.clone(),
        master_seed: config.master_seed,
        period,
        samples_per_row: samples,
        rows: rows.clone(),
        all_hold: rows.iter().all(|r| r.holds),
    };
    write_json(&out_dir.join("depletion.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
