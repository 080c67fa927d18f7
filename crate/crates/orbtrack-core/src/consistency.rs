//! Estimator-consistency metrics: the posterior Cramér–Rao bound (PCRB)
//! recursion, Monte Carlo RMSE matrices, the `A = RMSE − PCRB` spectral
//! diagnostics, and the normalized estimation error squared (NEES).
//!
//! The PCRB is computed with the standard recursive information form
//!
//! `J_{k+1} = D²² − D²¹ (J_k + D¹¹)⁻¹ D¹²`,
//!
//! with `D¹¹ = E[Fᵀ Q⁻¹ F]`, `D¹² = −E[Fᵀ] Q⁻¹`, `D²¹ = (D¹²)ᵀ`, and
//! `D²² = Q⁻¹ + p_d·E[Hᵀ R⁻¹ H · 1_FOV]`; expectations are Monte Carlo
//! averages over noisy truth draws, and detection randomness enters through
//! the expected-information (information-reduction) factor. The bound on the
//! estimation error covariance at epoch k is `J_k⁻¹`, seeded with
//! `J₀ = P₀⁻¹` so the epoch-0 bound is the prior covariance itself.

use nalgebra::{Matrix2, Matrix6, Vector6};
use rand::Rng;

use crate::dynamics;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::state::{GaussianBelief, StateVector};

/// Lower edge of the two-sided 90% χ²₆ acceptance band for NEES.
pub const NEES_BAND_LOWER: f64 = 1.635;
/// Upper edge of the two-sided 90% χ²₆ acceptance band for NEES.
pub const NEES_BAND_UPPER: f64 = 12.592;

/// Absolute diagonal jitter applied when an information matrix is singular.
const INFORMATION_JITTER: f64 = 1e-12;

/// One epoch-to-epoch set of PCRB information increments.
#[derive(Debug, Clone)]
pub struct PcrbStepTerms {
    /// `E[Fᵀ Q⁻¹ F]`.
    pub d11: Matrix6<f64>,
    /// `−E[Fᵀ] Q⁻¹`.
    pub d12: Matrix6<f64>,
    /// `Q⁻¹ + p_d·E[Hᵀ R⁻¹ H · 1_FOV]`.
    pub d22: Matrix6<f64>,
}

/// PCRB bound matrices per epoch.
#[derive(Debug, Clone)]
pub struct PcrbSeries {
    pub times: Vec<f64>,
    /// `J_k⁻¹` per epoch; `bounds[0]` is the prior covariance exactly.
    pub bounds: Vec<Matrix6<f64>>,
    /// True where a singular information matrix needed diagonal jitter.
    pub regularized: Vec<bool>,
}

/// Per-run aligned state series used by the RMSE assembly.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub times: Vec<f64>,
    pub truths: Vec<Vector6<f64>>,
    pub estimates: Vec<Vector6<f64>>,
}

/// Assembled consistency diagnostics.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub times: Vec<f64>,
    /// `‖A_k‖₂` with `A_k = RMSE_k − PCRB_k`.
    pub spectral_norms: Vec<f64>,
    /// `λ_min(A_k)`.
    pub lambda_mins: Vec<f64>,
    /// True where `λ_min` is negative but within round-off of zero
    /// (above `−1e-6·‖A‖₂`).
    pub roundoff_flags: Vec<bool>,
    pub nees_times: Vec<f64>,
    pub nees_values: Vec<f64>,
    /// Fraction of NEES values outside the 90% χ²₆ band.
    pub nees_outside_fraction: f64,
}

/// Invert a symmetric positive-definite matrix, falling back to a single
/// absolute diagonal jitter when the factorization fails; the flag reports
/// whether the jitter was needed.
fn invert_spd_with_jitter(m: &Matrix6<f64>) -> Result<(Matrix6<f64>, bool)> {
    let sym = linalg::symmetrize(m);
    if let Some(chol) = nalgebra::Cholesky::new(sym) {
        return Ok((chol.inverse(), false));
    }
    let bumped = sym + Matrix6::identity() * INFORMATION_JITTER;
    match nalgebra::Cholesky::new(bumped) {
        Some(chol) => Ok((chol.inverse(), true)),
        None => Err(Error::Numerical(
            "information matrix is not positive definite even after jitter".into(),
        )),
    }
}

/// Solve `m·X = b` with the same jitter fallback as [`invert_spd_with_jitter`].
fn solve_spd_with_jitter(
    m: &Matrix6<f64>,
    b: &Matrix6<f64>,
) -> Result<(Matrix6<f64>, bool)> {
    let sym = linalg::symmetrize(m);
    if let Some(chol) = nalgebra::Cholesky::new(sym) {
        let mut x = *b;
        chol.solve_mut(&mut x);
        return Ok((x, false));
    }
    let bumped = sym + Matrix6::identity() * INFORMATION_JITTER;
    match nalgebra::Cholesky::new(bumped) {
        Some(chol) => {
            let mut x = *b;
            chol.solve_mut(&mut x);
            Ok((x, true))
        }
        None => Err(Error::Numerical(
            "information increment is not positive definite even after jitter".into(),
        )),
    }
}

/// One step of the recursive PCRB information update; returns `J_{k+1}` and
/// whether regularization was required.
pub fn pcrb_step(j: &Matrix6<f64>, terms: &PcrbStepTerms) -> Result<(Matrix6<f64>, bool)> {
    for (name, m) in [("d11", &terms.d11), ("d12", &terms.d12), ("d22", &terms.d22)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite entries in PCRB term {name}")));
        }
    }
    let inner = j + terms.d11;
    let (x, flagged) = solve_spd_with_jitter(&inner, &terms.d12)?;
    let j_next = linalg::symmetrize(&(terms.d22 - terms.d12.transpose() * x));
    Ok((j_next, flagged))
}

/// Recursive PCRB over an epoch grid, with expectations estimated from
/// `runs` noisy truth trajectories drawn from the prior.
///
/// `epochs[0]` is the prior's epoch; the returned series carries one bound
/// matrix per epoch, starting with the prior covariance itself. Process
/// noise must be invertible — it regularizes the flow-information term.
pub fn pcrb_series(
    prior: &GaussianBelief,
    epochs: &[f64],
    env: &Environment,
    runs: usize,
    rng: &mut impl Rng,
) -> Result<PcrbSeries> {
    prior.validate()?;
    env.validate()?;
    if runs == 0 {
        return Err(Error::Config("PCRB expectation needs at least one truth draw".into()));
    }
    if epochs.is_empty() {
        return Err(Error::Config("PCRB epoch grid must contain the initial epoch".into()));
    }
    if epochs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("PCRB epochs must be strictly increasing".into()));
    }
    if env.process_noise.is_zero() {
        return Err(Error::Config(
            "PCRB recursion requires invertible process noise (zero given)".into(),
        ));
    }

    let r_inv = linalg::solve_spd(&env.observation.noise_covariance(), &Matrix2::identity())?;

    let mut truths: Vec<StateVector> = Vec::with_capacity(runs);
    for _ in 0..runs {
        truths.push(StateVector::from_vector(&prior.sample(rng)?));
    }

    let (mut j, seeded_flag) = invert_spd_with_jitter(&prior.covariance)?;
    let mut series = PcrbSeries {
        times: vec![epochs[0]],
        bounds: vec![prior.covariance],
        regularized: vec![seeded_flag],
    };

    for win in epochs.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let dt = t1 - t0;
        let q_d = env.process_noise.discrete_covariance(dt);
        let q_inv = linalg::solve_spd(&q_d, &Matrix6::identity())?;

        let mut e_ftqf = Matrix6::zeros();
        let mut e_ft = Matrix6::zeros();
        let mut e_hrh = Matrix6::zeros();
        for truth in truths.iter_mut() {
            let f = dynamics::flow_jacobian(truth, t0, t1, env.int_dt, &env.constants, &env.drag)?;
            e_ftqf += f.transpose() * q_inv * f;
            e_ft += f.transpose();
            *truth = dynamics::propagate_with_noise(
                truth,
                t0,
                t1,
                env.int_dt,
                &env.constants,
                &env.drag,
                &env.process_noise,
                rng,
            )?;
            if env.observation.in_fov(truth, t1)? {
                let h = env.observation.measurement_jacobian(truth, t1)?;
                e_hrh += h.transpose() * r_inv * h;
            }
        }
        let n = runs as f64;
        let terms = PcrbStepTerms {
            d11: linalg::symmetrize(&(e_ftqf / n)),
            d12: -(e_ft / n) * q_inv,
            d22: linalg::symmetrize(
                &(q_inv + e_hrh * (env.observation.prob_detection / n)),
            ),
        };
        let (j_next, step_flag) = pcrb_step(&j, &terms)?;
        j = j_next;
        let (bound, inv_flag) = invert_spd_with_jitter(&j)?;
        series.times.push(t1);
        series.bounds.push(linalg::symmetrize(&bound));
        series.regularized.push(step_flag || inv_flag);
    }
    Ok(series)
}

/// Per-epoch Monte Carlo RMSE matrices `E[(x̂−x)(x̂−x)ᵀ]` over aligned runs.
pub fn rmse_matrix_series(runs: &[RunSeries]) -> Result<Vec<Matrix6<f64>>> {
    if runs.len() < 2 {
        return Err(Error::Config(format!(
            "RMSE matrices need at least 2 runs, got {}",
            runs.len()
        )));
    }
    let reference = &runs[0].times;
    for (idx, run) in runs.iter().enumerate() {
        if run.truths.len() != run.times.len() || run.estimates.len() != run.times.len() {
            return Err(Error::Alignment(format!(
                "run {idx}: series lengths differ ({} times, {} truths, {} estimates)",
                run.times.len(),
                run.truths.len(),
                run.estimates.len()
            )));
        }
        if run.times.len() != reference.len()
            || run
                .times
                .iter()
                .zip(reference)
                .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::Alignment(format!(
                "run {idx} epochs do not match run 0"
            )));
        }
    }
    let scale = 1.0 / runs.len() as f64;
    Ok((0..reference.len())
        .map(|k| {
            let mut acc = Matrix6::zeros();
            for run in runs {
                let e = run.estimates[k] - run.truths[k];
                acc += e * e.transpose();
            }
            linalg::symmetrize(&(acc * scale))
        })
        .collect())
}

/// Largest singular value of a 6×6 matrix.
pub fn spectral_norm(a: &Matrix6<f64>) -> f64 {
    a.singular_values().max()
}

/// Smallest eigenvalue of a symmetric 6×6 matrix.
pub fn lambda_min_symmetric(a: &Matrix6<f64>) -> f64 {
    linalg::symmetrize(a).symmetric_eigenvalues().min()
}

/// Normalized estimation error squared,
/// `β = (x − μ)ᵀ P⁻¹ (x − μ)`, clamped at zero against round-off.
pub fn nees(truth: &StateVector, belief: &GaussianBelief) -> Result<f64> {
    belief.validate()?;
    let e = truth.to_vector() - belief.mean;
    let x = linalg::solve_spd(&belief.covariance, &e)?;
    Ok(e.dot(&x).max(0.0))
}

/// Assemble the consistency report from aligned RMSE and PCRB series plus
/// NEES samples taken at measurement epochs.
pub fn consistency_report(
    times: &[f64],
    rmse: &[Matrix6<f64>],
    pcrb: &[Matrix6<f64>],
    nees_samples: &[(f64, f64)],
) -> Result<ConsistencyReport> {
    if times.len() != rmse.len() || times.len() != pcrb.len() {
        return Err(Error::Alignment(format!(
            "series lengths differ: {} epochs, {} RMSE, {} PCRB",
            times.len(),
            rmse.len(),
            pcrb.len()
        )));
    }
    let mut spectral_norms = Vec::with_capacity(times.len());
    let mut lambda_mins = Vec::with_capacity(times.len());
    let mut roundoff_flags = Vec::with_capacity(times.len());
    for (r, p) in rmse.iter().zip(pcrb) {
        let a = r - p;
        let norm = spectral_norm(&a);
        let lam = lambda_min_symmetric(&a);
        spectral_norms.push(norm);
        lambda_mins.push(lam);
        roundoff_flags.push(lam < 0.0 && lam >= -1e-6 * norm);
    }
    let mut nees_times = Vec::with_capacity(nees_samples.len());
    let mut nees_values = Vec::with_capacity(nees_samples.len());
    let mut outside = 0usize;
    for &(t, beta) in nees_samples {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Config(format!(
                "NEES values must be non-negative and finite, got {beta} at t={t}"
            )));
        }
        if !(NEES_BAND_LOWER..=NEES_BAND_UPPER).contains(&beta) {
            outside += 1;
        }
        nees_times.push(t);
        nees_values.push(beta);
    }
    let nees_outside_fraction = if nees_samples.is_empty() {
        0.0
    } else {
        outside as f64 / nees_samples.len() as f64
    };
    Ok(ConsistencyReport {
        times: times.to_vec(),
        spectral_norms,
        lambda_mins,
        roundoff_flags,
        nees_times,
        nees_values,
        nees_outside_fraction,
    })
}

// ---------------------------------------------------------------------------
