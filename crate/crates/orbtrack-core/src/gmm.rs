//! Gaussian-mixture fitting with automatic component selection by minimum
//! message length, using component-wise EM: each component is updated (or
//! annihilated) in turn against a cached log-density table, and after the
//! inner loop converges the weakest surviving component is forcibly removed
//! so every component count down to one gets scored. The mixture with the
//! shortest message length wins.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};

/// Free parameters per component: d for the mean plus d(d+1)/2 for the
/// symmetric covariance.
pub fn params_per_component(dim: usize) -> usize {
    dim + dim * (dim + 1) / 2
}

/// Minimum expected sample support a component must keep to survive.
const MIN_COMPONENT_SUPPORT: f64 = 10.0;

/// One mixture component.
#[derive(Clone, Debug)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// A finite Gaussian mixture.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub components: Vec<GmmComponent>,
}

impl GaussianMixture {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Log density ln Σ_m w_m N(y; μ_m, C_m), via log-sum-exp.
    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let g = GaussianDensity::new(&c.covariance)?;
            terms.push(c.weight.ln() + g.log_density(y, &c.mean));
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }

    /// First moment Σ w_m μ_m.
    pub fn mean(&self) -> DVector<f64> {
        let d = self.dim();
        let mut m = DVector::zeros(d);
        for c in &self.components {
            m += &c.mean * c.weight;
        }
        m
    }

    /// Second central moment by the law of total covariance:
    /// Σ w_m (C_m + μ_m μ_mᵀ) − μμᵀ.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mu = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for c in &self.components {
            cov += (&c.covariance + &c.mean * c.mean.transpose()) * c.weight;
        }
        cov -= &mu * mu.transpose();
        cov
    }
}

/// Cached Cholesky machinery for one Gaussian's log density.
struct GaussianDensity {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl GaussianDensity {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Numerical("component covariance not positive definite".into()))?;
        let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d as f64 * (std::f64::consts::TAU).ln() + log_det);
        Ok(Self { chol, log_norm })
    }

    fn log_density(&self, y: &DVector<f64>, mean: &DVector<f64>) -> f64 {
        let diff = y - mean;
        let solved = self.chol.solve(&diff);
        self.log_norm - 0.5 * diff.dot(&solved)
    }
}

/// Knobs for the fit.
#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    /// Initial (largest) component count.
    pub k_max: usize,
    /// Smallest component count to score.
    pub k_min: usize,
    /// Relative message-length change declaring inner-loop convergence.
    pub tol: f64,
    /// Hard cap on component-wise EM sweeps per inner loop.
    pub max_sweeps: usize,
    /// Diagonal floor added to every covariance estimate.
    pub cov_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { k_max: 8, k_min: 1, tol: 1e-5, max_sweeps: 500, cov_floor: 1e-10 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_max < self.k_min {
            return Err(Error::Config("need 1 ≤ k_min ≤ k_max".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config("tol must lie in (0, 1)".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be positive".into()));
        }
        if !(self.cov_floor > 0.0) {
            return Err(Error::Config("cov_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a fit: the winning mixture plus the selection trace.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub mixture: GaussianMixture,
    /// Message length of the winning mixture (lower is better).
    pub message_length: f64,
    /// (component count, message length) for every converged candidate.
    pub candidates: Vec<(usize, f64)>,
    /// Total component-wise EM sweeps spent.
    pub sweeps: usize,
}

struct Working {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    /// n×k cache of component log densities ln N(y_i; μ_m, C_m).
    log_dens: DMatrix<f64>,
}

impl Working {
    fn k(&self) -> usize {
        self.weights.len()
    }

    fn refresh_column(&mut self, m: usize, data: &DMatrix<f64>) -> Result<()> {
        let g = GaussianDensity::new(&self.covs[m])?;
        for i in 0..data.nrows() {
            let y = data.row(i).transpose();
            self.log_dens[(i, m)] = g.log_density(&y, &self.means[m]);
        }
        Ok(())
    }

    fn remove_component(&mut self, m: usize) {
        self.weights.remove(m);
        self.means.remove(m);
        self.covs.remove(m);
        self.log_dens = self.log_dens.clone().remove_column(m);
        let sum: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= sum;
        }
    }

    /// Row-wise log Σ_m w_m exp(log_dens_im); also the total log-likelihood.
    fn log_likelihood(&self) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.log_dens.nrows() {
            total += self.row_logsumexp(i)?;
        }
        Ok(total)
    }

    fn row_logsumexp(&self, i: usize) -> Result<f64> {
        let mut max = f64::NEG_INFINITY;
        for m in 0..self.k() {
            let v = self.weights[m].ln() + self.log_dens[(i, m)];
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Numerical(
                "a sample has zero density under every component".into(),
            ));
        }
        let mut sum = 0.0;
        for m in 0..self.k() {
            sum += (self.weights[m].ln() + self.log_dens[(i, m)] - max).exp();
        }
        Ok(max + sum.ln())
    }

    /// Message length for the current parameters.
    fn message_length(&self, n: usize, n_p: usize) -> Result<f64> {
        let n_f = n as f64;
        let k = self.k() as f64;
        let mut len = k / 2.0 * (n_f / 12.0).ln() + k * (n_p as f64 + 1.0) / 2.0;
        for w in &self.weights {
            len += n_p as f64 / 2.0 * (n_f * w / 12.0).ln();
        }
        len -= self.log_likelihood()?;
        if !len.is_finite() {
            return Err(Error::Numerical("non-finite message length".into()));
        }
        Ok(len)
    }

    fn snapshot(&self) -> GaussianMixture {
        GaussianMixture {
            components: (0..self.k())
                .map(|m| GmmComponent {
                    weight: self.weights[m],
                    mean: self.means[m].clone(),
                    covariance: self.covs[m].clone(),
                })
                .collect(),
        }
    }
}

/// Fit a Gaussian mixture to `data` (one sample per row), selecting the
/// component count by minimum message length. Deterministic for a fixed
/// generator state.
pub fn fit_gmm(data: &DMatrix<f64>, config: &FitConfig, rng: &mut impl Rng) -> Result<FitResult> {
    config.validate()?;
    let n = data.nrows();
    let d = data.ncols();
    if d == 0 {
        return Err(Error::Config("data must have at least one column".into()));
    }
    if !data.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidState("non-finite sample".into()));
    }
    if n < 10 * config.k_max {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support k_max = {} (need at least {})",
            config.k_max,
            10 * config.k_max
        )));
    }
    let n_p = params_per_component(d);

    // --- Initialization: means at distinct random samples, shared shrunken
    // sample covariance, uniform weights.
    let k0 = config.k_max;
    let grand_mean = data.row_mean().transpose();
    let mut sample_cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let diff = data.row(i).transpose() - &grand_mean;
        sample_cov += &diff * diff.transpose();
    }
    sample_cov /= (n - 1) as f64;
    let mut init_cov = sample_cov / (k0 as f64).powf(2.0 / d as f64);
    for i in 0..d {
        init_cov[(i, i)] += config.cov_floor;
    }
    let picks = sample_indices(rng, n, k0);
    let mut work = Working {
        weights: vec![1.0 / k0 as f64; k0],
        means: picks.iter().map(|i| data.row(i).transpose()).collect(),
        covs: vec![init_cov; k0],
        log_dens: DMatrix::zeros(n, k0),
    };
    for m in 0..k0 {
        work.refresh_column(m, data)?;
    }

    let mut best: Option<(GaussianMixture, f64)> = None;
    let mut candidates = Vec::new();
    let mut total_sweeps = 0usize;

    'outer: loop {
        // --- Inner loop: component-wise EM with MML weighting.
        let mut prev_len = f64::INFINITY;
        for _ in 0..config.max_sweeps {
            total_sweeps += 1;
            let mut m = 0usize;
            while m < work.k() {
                // Responsibilities for component m under current parameters.
                let mut u_m = 0.0;
                let mut resp = Vec::with_capacity(n);
                for i in 0..n {
                    let lse = work.row_logsumexp(i)?;
                    let r = (work.weights[m].ln() + work.log_dens[(i, m)] - lse).exp();
                    resp.push(r);
                    u_m += r;
                }
                // MML weight update with built-in annihilation. The support
                // threshold is the parameter half-cost, raised to 10 samples
                // so every surviving component keeps a meaningful footprint
                // (ten points per component is also the fit's entry bar).
                let support_floor = (n_p as f64 / 2.0).max(MIN_COMPONENT_SUPPORT);
                work.weights[m] = (u_m - support_floor).max(0.0) / n as f64;
                let sum: f64 = work.weights.iter().sum();
                if !(sum > 0.0) {
                    return Err(Error::Numerical("all components annihilated".into()));
                }
                for w in &mut work.weights {
                    *w /= sum;
                }
                if work.weights[m] == 0.0 {
                    work.remove_component(m);
                    continue; // same index now holds the next component
                }
                // Mean / covariance update from the responsibilities.
                let mut mean = DVector::zeros(d);
                for i in 0..n {
                    mean += data.row(i).transpose() * resp[i];
                }
                mean /= u_m;
                let mut cov = DMatrix::zeros(d, d);
                for i in 0..n {
                    let diff = data.row(i).transpose() - &mean;
                    cov += &diff * diff.transpose() * resp[i];
                }
                cov /= u_m;
                for i in 0..d {
                    cov[(i, i)] += config.cov_floor;
                }
                work.means[m] = mean;
                work.covs[m] = cov;
                work.refresh_column(m, data)?;
                m += 1;
            }
            let len = work.message_length(n, n_p)?;
            let converged = (prev_len - len).abs() < config.tol * len.abs();
            prev_len = len;
            if converged {
                break;
            }
        }

        // --- Score the converged candidate.
        let len = work.message_length(n, n_p)?;
        candidates.push((work.k(), len));
        if best.as_ref().map_or(true, |(_, b)| len < *b) {
            best = Some((work.snapshot(), len));
        }

        // --- Force-annihilate the weakest component and go again.
        if work.k() > config.k_min {
            let weakest = work
                .weights
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("at least one component");
            work.remove_component(weakest);
            for m in 0..work.k() {
                work.refresh_column(m, data)?;
            }
        } else {
            break 'outer;
        }
    }

    let (mixture, message_length) = best.expect("at least one candidate scored");
    Ok(FitResult { mixture, message_length, candidates, sweeps: total_sweeps })
}

// ---------------------------------------------------------------------------
// Uncertainty-propagation study
// ---------------------------------------------------------------------------

/// Trace of each component's position-covariance block (km²). The model must
/// carry at least the three position coordinates in its leading dimensions.
pub fn position_trace_report(model: &GaussianMixture) -> Result<Vec<f64>> {
    if model.dim() < 3 {
        return Err(Error::Domain(format!(
            "position traces need at least 3 dimensions, model has {}",
            model.dim()
        )));
    }
    Ok(model
        .components
        .iter()
        .map(|c| c.covariance.view((0, 0), (3, 3)).trace())
        .collect())
}

/// One clustered snapshot of the propagated ensemble.
#[derive(Clone, Debug)]
pub struct StudySnapshot {
    pub time: f64,
    pub fit: FitResult,
}

/// Sample `n` states from `initial`, propagate the ensemble noise-free, and
/// fit a mixture to the 3-D position marginal at each requested time.
///
/// Times must be sorted strictly ascending and non-negative; the ensemble is
/// advanced incrementally between snapshots, so the cost is one propagation
/// pass regardless of how many times are requested.
pub fn propagate_and_cluster_study(
    initial: &crate::state::GaussianBelief,
    times: &[f64],
    n: usize,
    fit_config: &FitConfig,
    env: &crate::env::Environment,
    rng: &mut impl Rng,
) -> Result<Vec<StudySnapshot>> {
    initial.validate()?;
    env.validate()?;
    fit_config.validate()?;
    if times.is_empty() {
        return Err(Error::Config("study needs at least one snapshot time".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "study times must be non-negative and strictly increasing".into(),
        ));
    }

    let mut states: Vec<crate::state::StateVector> = Vec::with_capacity(n);
    for _ in 0..n {
        states.push(crate::state::StateVector::from_vector(&initial.sample(rng)?));
    }

    let mut snapshots = Vec::with_capacity(times.len());
    let mut t_current = 0.0;
    for &t in times {
        if t > t_current {
            for state in states.iter_mut() {
                *state = crate::dynamics::propagate(
                    state,
                    t_current,
                    t,
                    env.int_dt,
                    &env.constants,
                    &env.drag,
                )?;
            }
            t_current = t;
        }
        let mut data = DMatrix::zeros(n, 3);
        for (i, state) in states.iter().enumerate() {
            for j in 0..3 {
                data[(i, j)] = state.position[j];
            }
        }
        let fit = fit_gmm(&data, fit_config, rng)?;
        snapshots.push(StudySnapshot { time: t, fit });
    }
    Ok(snapshots)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn standard_component(dim: usize) -> GmmComponent {
        GmmComponent {
            weight: 1.0,
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
        }
    }

    #[test]
    fn parameter_count_matches_mean_plus_symmetric_covariance() {
        assert_eq!(params_per_component(1), 2);
        assert_eq!(params_per_component(2), 5);
        assert_eq!(params_per_component(3), 9);
        assert_eq!(params_per_component(6), 27);
    }

    #[test]
    fn single_standard_normal_log_density_is_exact() {
        let mix = GaussianMixture { components: vec![standard_component(2)] };
        let at_origin = mix.log_density(&DVector::zeros(2)).unwrap();
        assert_relative_eq!(at_origin, -(std::f64::consts::TAU).ln(), max_relative = 1e-14);
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let expected = -(std::f64::consts::TAU).ln() - 0.5 * 5.0;
        assert_relative_eq!(mix.log_density(&y).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn correlated_gaussian_log_density_matches_hand_computation() {
        // C = [[2, 0.5], [0.5, 1]]: |C| = 1.75, C⁻¹ = [[1,-0.5],[-0.5,2]]/1.75.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mix = GaussianMixture {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: DVector::zeros(2),
                covariance: cov,
            }],
        };
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let quad = (1.0 - 0.5 - 0.5 + 2.0) / 1.75;
        let expected = -(std::f64::consts::TAU).ln() - 0.5 * (1.75_f64).ln() - 0.5 * quad;
        assert_relative_eq!(mix.log_density(&y).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn mixture_moments_follow_total_covariance_law() {
        let a = DVector::from_vec(vec![3.0, 0.0]);
        let mix = GaussianMixture {
            components: vec![
                GmmComponent {
                    weight: 0.5,
                    mean: a.clone(),
                    covariance: DMatrix::identity(2, 2),
                },
                GmmComponent { weight: 0.5, mean: -a.clone(), covariance: DMatrix::identity(2, 2) },
            ],
        };
        assert_abs_diff_eq!(mix.mean(), DVector::zeros(2), epsilon = 1e-14);
        let expected = DMatrix::identity(2, 2) + &a * a.transpose();
        assert_abs_diff_eq!(mix.covariance(), expected, epsilon = 1e-13);
    }

    fn draw_gaussian(
        n: usize,
        mean: &[f64],
        chol_diag: &[f64],
        rng: &mut impl Rng,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                mean.iter()
                    .zip(chol_diag)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn to_matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        DMatrix::from_fn(n, d, |i, j| rows[i][j])
    }

    #[test]
    fn fit_recovers_two_separated_clusters() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let mut rows = draw_gaussian(600, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        rows.extend(draw_gaussian(600, &[12.0, -4.0], &[1.0, 1.0], &mut rng));
        let data = to_matrix(rows);
        let fit = fit_gmm(&data, &FitConfig::default(), &mut rng).unwrap();

        assert_eq!(fit.mixture.component_count(), 2, "candidates: {:?}", fit.candidates);
        let mut comps = fit.mixture.components.clone();
        comps.sort_by(|a, b| a.mean[0].total_cmp(&b.mean[0]));
        assert_relative_eq!(comps[0].weight, 0.5, max_relative = 0.1);
        assert_abs_diff_eq!(comps[0].mean[0], 0.0, epsilon = 0.2);
        assert_abs_diff_eq!(comps[1].mean[0], 12.0, epsilon = 0.2);
        assert_abs_diff_eq!(comps[1].mean[1], -4.0, epsilon = 0.2);
        for c in &comps {
            assert_relative_eq!(c.covariance[(0, 0)], 1.0, max_relative = 0.3);
        }
    }

    #[test]
    fn fit_prefers_one_component_for_unimodal_data() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let rows = draw_gaussian(800, &[5.0, -1.0, 2.0], &[1.0, 2.0, 0.5], &mut rng);
        let data = to_matrix(rows);
        let fit = fit_gmm(&data, &FitConfig::default(), &mut rng).unwrap();
        assert_eq!(fit.mixture.component_count(), 1, "candidates: {:?}", fit.candidates);
        let c = &fit.mixture.components[0];
        assert_abs_diff_eq!(c.mean[0], 5.0, epsilon = 0.2);
        assert_relative_eq!(c.covariance[(1, 1)], 4.0, max_relative = 0.2);
        // The selected model must beat (or match) every other candidate.
        for (_, len) in &fit.candidates {
            assert!(fit.message_length <= *len + 1e-9);
        }
    }

    #[test]
    fn too_few_samples_are_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let data = to_matrix(draw_gaussian(79, &[0.0], &[1.0], &mut rng));
        let err = fit_gmm(&data, &FitConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn duplicated_points_survive_via_covariance_floor() {
        let rows = vec![vec![1.5, -2.0]; 200];
        let data = to_matrix(rows);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let fit = fit_gmm(&data, &FitConfig::default(), &mut rng).unwrap();
        assert_eq!(fit.mixture.component_count(), 1);
        let c = &fit.mixture.components[0];
        assert_abs_diff_eq!(c.mean[0], 1.5, epsilon = 1e-9);
        assert!(c.covariance[(0, 0)] <= 2e-10, "floor should dominate");
    }

    #[test]
    fn fitting_is_deterministic_per_seed() {
        let mut data_rng = ChaCha12Rng::seed_from_u64(3);
        let mut rows = draw_gaussian(300, &[0.0, 0.0], &[1.0, 1.0], &mut data_rng);
        rows.extend(draw_gaussian(300, &[8.0, 8.0], &[1.0, 1.0], &mut data_rng));
        let data = to_matrix(rows);
        let fit_with = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            fit_gmm(&data, &FitConfig::default(), &mut rng).unwrap()
        };
        let a = fit_with(4);
        let b = fit_with(4);
        assert_eq!(a.message_length, b.message_length);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.mixture.components.len(), b.mixture.components.len());
        for (ca, cb) in a.mixture.components.iter().zip(&b.mixture.components) {
            assert_eq!(ca.mean, cb.mean);
            assert_eq!(ca.covariance, cb.covariance);
        }
    }

    #[test]
    fn mixture_log_density_never_nan_for_finite_inputs() {
        let mix = GaussianMixture {
            components: vec![
                GmmComponent {
                    weight: 0.7,
                    mean: DVector::from_vec(vec![0.0]),
                    covariance: DMatrix::from_vec(1, 1, vec![1e-6]),
                },
                GmmComponent {
                    weight: 0.3,
                    mean: DVector::from_vec(vec![1e3]),
                    covariance: DMatrix::from_vec(1, 1, vec![1e4]),
                },
            ],
        };
        for y in [-1e6, -10.0, 0.0, 1e-9, 500.0, 1e6] {
            let v = mix.log_density(&DVector::from_vec(vec![y])).unwrap();
            assert!(!v.is_nan(), "log density NaN at {y}");
        }
    }

    // --- Uncertainty-propagation study -----------------------------------

    use crate::dynamics::{DragParams, PhysicalConstants, ProcessNoise};
    use crate::env::Environment;
    use crate::state::GaussianBelief;
    use nalgebra::{Matrix6, Vector6};

    /// Two-body drag-free world at a 10 s integrator step, the setting of
    /// the ensemble-propagation study.
    fn study_env() -> Environment {
        let mut env = Environment::default();
        env.constants = PhysicalConstants::default().two_body();
        env.drag = DragParams::disabled();
        env.process_noise = ProcessNoise::new(Matrix6::zeros()).unwrap();
        env.int_dt = 10.0;
        env
    }

    fn study_belief(sigma_vel: f64) -> GaussianBelief {
        let inc = std::f64::consts::PI / 12.0;
        GaussianBelief::from_std_devs(
            Vector6::new(6600.0 * inc.cos(), 0.0, 6600.0 * inc.sin(), 0.0, 7.8848, 0.0),
            [1.0, 1.0, 1.0, sigma_vel, sigma_vel, sigma_vel],
        )
    }

    #[test]
    fn position_trace_of_isotropic_component_is_three_c() {
        let c = 0.7;
        let mix = GaussianMixture {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: DVector::zeros(3),
                covariance: DMatrix::identity(3, 3) * c,
            }],
        };
        let traces = position_trace_report(&mix).unwrap();
        assert_eq!(traces.len(), 1);
        assert_relative_eq!(traces[0], 3.0 * c, max_relative = 1e-12);

        let low_dim = GaussianMixture { components: vec![standard_component(2)] };
        assert!(position_trace_report(&low_dim).is_err());
    }

    #[test]
    fn study_at_time_zero_recovers_the_initial_gaussian() {
        // The t=0 ensemble is Gaussian by construction: one component, with
        // position trace 3·(1 km)² within sampling error.
        let env = study_env();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let snapshots = propagate_and_cluster_study(
            &study_belief(1.0),
            &[0.0],
            2000,
            &FitConfig::default(),
            &env,
            &mut rng,
        )
        .unwrap();
        assert_eq!(snapshots.len(), 1);
        let model = &snapshots[0].fit.mixture;
        assert_eq!(model.component_count(), 1);
        let trace = position_trace_report(model).unwrap()[0];
        assert!(
            (trace - 3.0).abs() < 0.15,
            "t=0 position trace {trace} outside 3 km² ± 5%"
        );
    }

    #[test]
    fn keplerian_shear_splits_the_high_velocity_ensemble() {
        // With σ_v = 1 km/s the ensemble wraps around the orbit within one
        // period and a single Gaussian no longer fits the position marginal.
        let env = study_env();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let snapshots = propagate_and_cluster_study(
            &study_belief(1.0),
            &[0.0, 1500.0],
            400,
            &FitConfig::default(),
            &env,
            &mut rng,
        )
        .unwrap();
        assert_eq!(snapshots[0].fit.mixture.component_count(), 1);
        assert!(
            snapshots[1].fit.mixture.component_count() >= 2,
            "expected multimodality at t=1500 s, got k = {}",
            snapshots[1].fit.mixture.component_count()
        );
    }

    #[test]
    fn study_rejects_unsorted_or_negative_times() {
        let env = study_env();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for times in [vec![], vec![-1.0], vec![0.0, 0.0], vec![10.0, 5.0]] {
            assert!(matches!(
                propagate_and_cluster_study(
                    &study_belief(0.01),
                    &times,
                    100,
                    &FitConfig::default(),
                    &env,
                    &mut rng,
                ),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn study_is_deterministic_per_seed() {
        let env = study_env();
        let run = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            propagate_and_cluster_study(
                &study_belief(0.01),
                &[0.0, 300.0],
                200,
                &FitConfig::default(),
                &env,
                &mut rng,
            )
            .unwrap()
            .iter()
            .map(|s| (s.time, s.fit.mixture.component_count(), s.fit.message_length))
            .collect::<Vec<_>>()
        };
        assert_eq!(run(77), run(77));
    }
}
