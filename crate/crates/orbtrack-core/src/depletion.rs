//! Analytic lower bound on particle retention across a full-period coast.
//!
//! Setting: a particle cloud with covariance `P` around a reference state `S₀`
//! coasts for one nominal orbital period `T₀ = T(S₀)` and is then confronted
//! with a single angles-only measurement. A particle survives the weight
//! update when its likelihood under the measurement exceeds a floor `b`; the
//! filter loses the track when no particle does. This module bounds the
//! probability that a particle drawn from the cloud lands inside the
//! likelihood threshold set, using a linearization of the period-resonant
//! error growth, and cross-checks the bound with a direct Monte Carlo oracle.
//!
//! Conventions:
//! - The likelihood score is `L = peak · exp(−Δyᵀ R⁻¹ Δy)` with
//!   `peak = 1/(2π√|R|)` — the squared Mahalanobis residual enters *without*
//!   the usual ½ factor. The threshold radii below are calibrated to the same
//!   convention, so the pair is internally consistent.
//! - The bound is only meaningful for dynamics that are actually periodic;
//!   [`verify_periodicity`] enforces that prerequisite before any bound is
//!   computed. With oblateness or drag enabled the reference state does not
//!   close after one Keplerian period and the analysis is refused.

use nalgebra::{Matrix2, Matrix6, SMatrix, Vector2, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{self, PhysicalConstants};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::observation::ObservationModel;
use crate::state::StateVector;

/// Position tolerance (km) for the closed-orbit prerequisite.
pub const PERIODICITY_POS_TOL: f64 = 1e-3;
/// Velocity tolerance (km/s) for the closed-orbit prerequisite.
pub const PERIODICITY_VEL_TOL: f64 = 1e-6;

/// Inputs of the retention analysis.
#[derive(Debug, Clone)]
pub struct DepletionConfig {
    /// Reference state `S₀` at the start of the coast (epoch 0).
    pub reference: StateVector,
    /// Cloud covariance `P` (6×6) about the reference state.
    pub cloud_cov: Matrix6<f64>,
    /// Measurement-noise covariance `R` (2×2, angles).
    pub measurement_cov: Matrix2<f64>,
    /// Likelihood floor `b` below which a particle counts as depleted.
    pub threshold: f64,
}

impl DepletionConfig {
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        for (name, m, n) in [
            ("cloud covariance", self.cloud_cov.as_slice(), 6),
            ("measurement covariance", self.measurement_cov.as_slice(), 2),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let (a, b) = (m[i * n + j], m[j * n + i]);
                    if (a - b).abs() > 1e-9 * (a.abs() + b.abs()).max(1.0) {
                        return Err(Error::Config(format!("{name} is not symmetric")));
                    }
                }
            }
        }
        // R must be strictly positive definite (no jitter rescue): the
        // likelihood score divides by it.
        nalgebra::Cholesky::new(self.measurement_cov)
            .ok_or_else(|| Error::Config("measurement covariance is not positive definite".into()))?;
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "likelihood floor must be positive and finite, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Threshold-set radius `n` (in the R metric) and contained-ellipsoid radius
/// `m` (in the composite metric); always `m ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseRadii {
    pub n: f64,
    pub m: f64,
}

/// Outputs of the retention analysis.
#[derive(Debug, Clone)]
pub struct DepletionResult {
    /// Nominal period `T₀ = T(S₀)` (s).
    pub period: f64,
    /// Gradient of the period with respect to the full state (s per km,
    /// s per km/s).
    pub period_gradient: Vector6<f64>,
    /// Sensitivity `M = ∂y/∂S` of the post-period measurement to the initial
    /// state (2×6).
    pub sensitivity: SMatrix<f64, 2, 6>,
    /// Composite innovation covariance `C = 2·M·P·Mᵀ + R` (2×2).
    pub composite_cov: Matrix2<f64>,
    /// Threshold-set radius in the R metric; 0 when the set is empty.
    pub n_radius: f64,
    /// Contained-ellipsoid radius in the C metric; 0 when the set is empty.
    pub m_radius: f64,
    /// Lower bound `1 − exp(−m²/2)` on the per-particle retention probability.
    pub lower_bound: f64,
    /// True when the floor `b` meets or exceeds the density peak, so no
    /// residual can clear it and the bound degenerates to zero.
    pub empty_threshold_set: bool,
}

/// Peak of the measurement likelihood, `1/(2π√|R|)` for the 2-D angle pair.
pub fn peak_density(measurement_cov: &Matrix2<f64>) -> Result<f64> {
    let det = measurement_cov.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Domain(format!(
            "measurement covariance determinant must be positive, got {det}"
        )));
    }
    Ok(1.0 / (std::f64::consts::TAU * det.sqrt()))
}

/// CDF of the chi-square distribution with two degrees of freedom,
/// `x ↦ 1 − exp(−x/2)`.
pub fn chi2_cdf_2dof(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-0.5 * x).exp()
    }
}

/// Analytic gradient of the Keplerian period with respect to the state.
///
/// With `a` from vis-viva, `dT/da = 3π√(a/μ)`, `∂a/∂r = 2a²·r/‖r‖³`, and
/// `∂a/∂v = 2a²·v/μ`; the chain rule gives the 6-vector `dT/dS`.
pub fn period_gradient(state: &StateVector, consts: &PhysicalConstants) -> Result<Vector6<f64>> {
    let a = dynamics::semi_major_axis(state, consts)?;
    let dt_da = 3.0 * std::f64::consts::PI * (a / consts.mu).sqrt();
    let r = state.radius();
    let da_dr = state.position * (2.0 * a * a / (r * r * r));
    let da_dv = state.velocity * (2.0 * a * a / consts.mu);
    let mut grad = Vector6::zeros();
    grad.fixed_rows_mut::<3>(0).copy_from(&(da_dr * dt_da));
    grad.fixed_rows_mut::<3>(3).copy_from(&(da_dv * dt_da));
    Ok(grad)
}

/// Sensitivity of the post-period measurement to the initial state, with the
/// period gradient supplied by the caller:
///
/// `M = ∂g/∂X · (I − f(S₀)·(dT/dS)ᵀ)`,
///
/// where `∂g/∂X` is the measurement Jacobian evaluated at the reference state
/// and the post-period epoch `t_epoch`, and `f(S₀) = [v; a(S₀)]` is the
/// dynamics vector field. The rank-one correction captures the along-track
/// displacement caused by the period shift of a perturbed orbit: by its own
/// periodicity, the perturbed state observed at the *nominal* period has
/// drifted by `f(S₀)·(T₀ − T(S))`. Passing a zero gradient reduces `M` to the
/// bare measurement Jacobian.
pub fn sensitivity_matrix_with_gradient(
    reference: &StateVector,
    period_grad: &Vector6<f64>,
    t_epoch: f64,
    env: &Environment,
) -> Result<SMatrix<f64, 2, 6>> {
    let dg_dx = env.observation.measurement_jacobian(reference, t_epoch)?;
    let accel = dynamics::total_acceleration(reference, &env.constants, &env.drag)?;
    let mut field = Vector6::zeros();
    field.fixed_rows_mut::<3>(0).copy_from(&reference.velocity);
    field.fixed_rows_mut::<3>(3).copy_from(&accel);
    let correction = Matrix6::identity() - field * period_grad.transpose();
    Ok(dg_dx * correction)
}

/// Sensitivity of the post-period measurement with the analytically derived
/// period gradient; returns the matrix together with the nominal period.
pub fn sensitivity_matrix(
    reference: &StateVector,
    env: &Environment,
) -> Result<(SMatrix<f64, 2, 6>, f64)> {
    let period = dynamics::keplerian_period(reference, &env.constants)?;
    let grad = period_gradient(reference, &env.constants)?;
    let m = sensitivity_matrix_with_gradient(reference, &grad, period, env)?;
    Ok((m, period))
}

/// Composite innovation covariance `C = 2·M·P·Mᵀ + R`: both the sampled
/// particle and the (independent, equally distributed) truth contribute one
/// `M·P·Mᵀ` term, the sensor noise the `R` term.
pub fn composite_covariance(
    config: &DepletionConfig,
    sensitivity: &SMatrix<f64, 2, 6>,
) -> Matrix2<f64> {
    let mpm = sensitivity * config.cloud_cov * sensitivity.transpose();
    linalg::symmetrize(&(mpm * 2.0 + config.measurement_cov))
}

/// Radii of the likelihood threshold set and of the largest composite-metric
/// ellipsoid contained in it.
///
/// The residual clears the floor iff `Δyᵀ R⁻¹ Δy ≤ n²` with
/// `n² = ln(peak/b)`; a floor at or above the peak leaves the set empty and
/// is reported as [`Error::EmptyThresholdSet`]. The contained radius scales
/// `n` by the worst-case metric mismatch, `m² = (λ_min(R)/λ_max(C))·n²`,
/// which guarantees `{Δyᵀ C⁻¹ Δy ≤ m²} ⊆ {Δyᵀ R⁻¹ Δy ≤ n²}`.
pub fn ellipse_radii(
    config: &DepletionConfig,
    sensitivity: &SMatrix<f64, 2, 6>,
) -> Result<EllipseRadii> {
    let peak = peak_density(&config.measurement_cov)?;
    let ratio = peak / config.threshold;
    if !(ratio > 1.0) {
        return Err(Error::EmptyThresholdSet { b: config.threshold, peak });
    }
    let n_sq = ratio.ln();
    let composite = composite_covariance(config, sensitivity);
    let alpha_min = config
        .measurement_cov
        .symmetric_eigenvalues()
        .min();
    let lambda_max = composite.symmetric_eigenvalues().max();
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Numerical(format!(
            "composite covariance has non-positive spectrum (λ_max = {lambda_max})"
        )));
    }
    let m_sq = (alpha_min / lambda_max) * n_sq;
    Ok(EllipseRadii { n: n_sq.sqrt(), m: m_sq.sqrt() })
}

/// Check that the noise-free flow closes after one analytic period, the
/// prerequisite for the retention bound; returns the period on success.
pub fn verify_periodicity(reference: &StateVector, env: &Environment) -> Result<f64> {
    let period = dynamics::keplerian_period(reference, &env.constants)?;
    let returned = dynamics::propagate(
        reference,
        0.0,
        period,
        env.int_dt,
        &env.constants,
        &env.drag,
    )?;
    let dp = (returned.position - reference.position).norm();
    let dv = (returned.velocity - reference.velocity).norm();
    if dp > PERIODICITY_POS_TOL || dv > PERIODICITY_VEL_TOL {
        return Err(Error::Domain(format!(
            "reference orbit does not close after one analytic period \
             (Δr = {dp:.3e} km, Δv = {dv:.3e} km/s); the retention bound \
             requires periodic dynamics — disable oblateness and drag"
        )));
    }
    Ok(period)
}

/// Full retention analysis: periodicity prerequisite, sensitivity
/// linearization, threshold radii, and the closed-form lower bound
/// `P(retained) ≥ 1 − exp(−m²/2)`.
///
/// A floor at or above the density peak is not an error here: the threshold
/// set is empty, so the bound degenerates to 0 and the result carries the
/// `empty_threshold_set` flag.
pub fn depletion_lower_bound(
    config: &DepletionConfig,
    env: &Environment,
) -> Result<DepletionResult> {
    config.validate()?;
    env.validate()?;
    let period = verify_periodicity(&config.reference, env)?;
    let period_grad = period_gradient(&config.reference, &env.constants)?;
    let sensitivity =
        sensitivity_matrix_with_gradient(&config.reference, &period_grad, period, env)?;
    let composite_cov = composite_covariance(config, &sensitivity);
    let (n_radius, m_radius, lower_bound, empty) = match ellipse_radii(config, &sensitivity) {
        Ok(radii) => (radii.n, radii.m, chi2_cdf_2dof(radii.m * radii.m), false),
        Err(Error::EmptyThresholdSet { .. }) => (0.0, 0.0, 0.0, true),
        Err(other) => return Err(other),
    };
    Ok(DepletionResult {
        period,
        period_gradient: period_grad,
        sensitivity,
        composite_cov,
        n_radius,
        m_radius,
        lower_bound,
        empty_threshold_set: empty,
    })
}

/// Outcome of the Monte Carlo retention oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionEstimate {
    /// Samples whose likelihood cleared the floor.
    pub retained: usize,
    /// Samples excluded because propagation or observation failed.
    pub failed: usize,
    /// Total samples drawn.
    pub samples: usize,
}

impl RetentionEstimate {
    /// Samples that produced a valid likelihood.
    pub fn valid(&self) -> usize {
        self.samples - self.failed
    }

    /// Empirical retention probability over the valid samples.
    pub fn fraction(&self) -> f64 {
        self.retained as f64 / self.valid() as f64
    }

    /// Binomial standard error of an estimate of probability `p` from the
    /// valid sample count.
    pub fn binomial_sigma(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.valid() as f64).sqrt()
    }
}

/// Direct Monte Carlo oracle for the retention probability.
///
/// Per sample: draw a particle `S ~ N(S₀, P)`, an independent truth
/// `S* ~ N(S₀, P)`, and sensor noise `ν ~ N(0, R)`; propagate both states
/// noise-free over the nominal period `T₀ = T(S₀)`; form the measurement
/// `y = g(S*(T₀)) + ν` and the particle's predicted angles `g(S(T₀))`; score
/// `L = peak·exp(−Δyᵀ R⁻¹ Δy)` on the wrapped residual and count the sample
/// as retained when `L` exceeds the floor. Samples whose propagation fails
/// are excluded from the fraction but reported in the estimate.
pub fn monte_carlo_retention(
    config: &DepletionConfig,
    env: &Environment,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<RetentionEstimate> {
    config.validate()?;
    env.validate()?;
    if n_samples == 0 {
        return Err(Error::Config("retention oracle needs at least one sample".into()));
    }
    let period = dynamics::keplerian_period(&config.reference, &env.constants)?;
    let l_cloud = linalg::cholesky_lower(&config.cloud_cov)?;
    let l_noise = linalg::cholesky_lower(&config.measurement_cov)?;
    let peak = peak_density(&config.measurement_cov)?;
    let s0 = config.reference.to_vector();
    let obs = &env.observation;

    let mut retained = 0usize;
    let mut failed = 0usize;
    for _ in 0..n_samples {
        let draw6 = |rng: &mut dyn rand::RngCore| {
            let xi = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            s0 + l_cloud * xi
        };
        let particle = StateVector::from_vector(&draw6(rng));
        let truth = StateVector::from_vector(&draw6(rng));
        let noise = l_noise
            * Vector2::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
        let outcome = (|| -> Result<f64> {
            let truth_t =
                dynamics::propagate(&truth, 0.0, period, env.int_dt, &env.constants, &env.drag)?;
            let particle_t =
                dynamics::propagate(&particle, 0.0, period, env.int_dt, &env.constants, &env.drag)?;
            let y = obs.observe(&truth_t, period)? + noise;
            let z_hat = obs.observe(&particle_t, period)?;
            let dy = ObservationModel::residual(&z_hat, &y);
            let q = dy.dot(&linalg::solve_spd(&config.measurement_cov, &dy)?);
            Ok(peak * (-q).exp())
        })();
        match outcome {
            Ok(likelihood) if likelihood > config.threshold => retained += 1,
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    if failed == n_samples {
        return Err(Error::Numerical(
            "every retention sample failed to propagate or observe".into(),
        ));
    }
    Ok(RetentionEstimate { retained, failed, samples: n_samples })
}

// ---------------------------------------------------------------------------
