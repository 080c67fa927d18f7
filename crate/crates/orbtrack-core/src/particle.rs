//! Bootstrap particle filter over the orbital state: noise-driven
//! propagation, log-space likelihood reweighting against the angular
//! sensor, weighted moment extraction, and systematic resampling.

use nalgebra::{Matrix6, Vector2, Vector6};
use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::observation::ObservationModel;
use crate::state::{GaussianBelief, StateVector};

/// Denominator floor below which the weighted ensemble no longer carries a
/// usable second moment (all mass on one particle).
const DEGENERACY_FLOOR: f64 = 1e-12;

/// A weighted particle ensemble. Weights are kept normalized (they sum to
/// one) between operations.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub particles: Vec<Vector6<f64>>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Draw `count` equally weighted samples from a Gaussian belief.
    pub fn from_belief(
        belief: &GaussianBelief,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config("particle count must be at least 2".into()));
        }
        belief.validate()?;
        let mut particles = Vec::with_capacity(count);
        for _ in 0..count {
            particles.push(belief.sample(rng)?);
        }
        Ok(Self { weights: vec![1.0 / count as f64; count], particles })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size 1/Σwᵢ².
    pub fn effective_sample_size(&self) -> f64 {
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        if sq > 0.0 {
            1.0 / sq
        } else {
            0.0
        }
    }

    /// Advance every particle through the noisy dynamics; weights are
    /// untouched (bootstrap proposal).
    pub fn propagate(&mut self, t0: f64, t1: f64, env: &Environment, rng: &mut impl Rng) -> Result<()> {
        for p in &mut self.particles {
            let next = crate::dynamics::propagate_with_noise(
                &StateVector::from_vector(p),
                t0,
                t1,
                env.int_dt,
                &env.constants,
                &env.drag,
                &env.process_noise,
                rng,
            )?;
            *p = next.to_vector();
        }
        Ok(())
    }

    /// Multiply each weight by the Gaussian likelihood of `z` given the
    /// particle's predicted angles, in log space with max-subtraction, then
    /// renormalize. Fails with `TotalDepletion` if every weight underflows
    /// to exactly zero.
    pub fn reweight(&mut self, z: &Vector2<f64>, t: f64, env: &Environment) -> Result<()> {
        let sigma2 = env.observation.noise_std.powi(2);
        if !(sigma2 > 0.0) {
            return Err(Error::Config(
                "particle reweighting requires positive measurement noise".into(),
            ));
        }
        let log_norm = -(std::f64::consts::TAU * sigma2).ln();
        let mut log_w = Vec::with_capacity(self.len());
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let z_hat = env.observation.observe(&StateVector::from_vector(p), t)?;
            let r = ObservationModel::residual(z, &z_hat);
            let log_lik = log_norm - r.norm_squared() / (2.0 * sigma2);
            if log_lik.is_nan() {
                return Err(Error::Numerical("NaN log-likelihood in reweighting".into()));
            }
            log_w.push(w.ln() + log_lik);
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::TotalDepletion { t });
        }
        let mut sum = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(&log_w) {
            *w = (lw - max).exp();
            sum += *w;
        }
        for w in &mut self.weights {
            *w /= sum;
        }
        Ok(())
    }

    /// Weighted mean and (unbiased) weighted covariance of the ensemble.
    pub fn moments(&self) -> Result<GaussianBelief> {
        let mut mean = Vector6::zeros();
        for (p, w) in self.particles.iter().zip(&self.weights) {
            mean += p * *w;
        }
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        let denom = 1.0 - sq;
        if denom <= DEGENERACY_FLOOR {
            return Err(Error::DegenerateEnsemble(format!(
                "effective sample size collapsed (1-Σw² = {denom:.3e})"
            )));
        }
        let mut cov = Matrix6::zeros();
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let d = p - mean;
            cov += d * d.transpose() * *w;
        }
        Ok(GaussianBelief::new(mean, cov / denom))
    }

    /// Systematic (low-variance) resampling: one uniform draw u places N
    /// evenly spaced pointers (i+u)/N over the cumulative weights; particle
    /// j is selected for pointer p when j is the smallest index with
    /// cumsum(j) > p. Weights reset to 1/N.
    pub fn resample_systematic(&mut self, rng: &mut impl Rng) -> Result<()> {
        let n = self.len();
        let u = rng.gen::<f64>();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.weights {
            if !(*w >= 0.0) {
                return Err(Error::Numerical("negative or NaN particle weight".into()));
            }
            acc += w;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::TotalDepletion { t: f64::NAN });
        }
        // Guard the last bin against roundoff so every pointer lands.
        cumulative[n - 1] = f64::MAX;

        let mut selected = Vec::with_capacity(n);
        let mut j = 0usize;
        for i in 0..n {
            let pointer = (i as f64 + u) / n as f64 * acc;
            while cumulative[j] <= pointer {
                j += 1;
            }
            selected.push(self.particles[j]);
        }
        self.particles = selected;
        self.weights = vec![1.0 / n as f64; n];
        Ok(())
    }
}

// ---------------------------------------------------------------------------
