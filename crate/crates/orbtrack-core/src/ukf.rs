//! Scaled unscented Kalman filter over the 6-D orbital state with 2-D
//! angular measurements. Sigma points are redrawn from the current belief
//! for both the time and the measurement update; angle arithmetic goes
//! through wrapped residuals so the azimuth cut at ±π is harmless.

use nalgebra::{Matrix2, Matrix6, SMatrix, Vector2, Vector6};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, solve_spd, symmetrize, wrap_angle};
use crate::observation::ObservationModel;
use crate::state::{GaussianBelief, StateVector};

/// State dimension.
const N: usize = 6;
/// Sigma-point count 2n+1.
const S: usize = 2 * N + 1;

/// Scaled unscented-transform parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    /// α=1, β=2, κ=3−n: the classical choice giving n+λ = 3 for n = 6.
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, kappa: -3.0 }
    }
}

struct UtWeights {
    wm: [f64; S],
    wc: [f64; S],
    gamma: f64,
}

impl UtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1]".into()));
        }
        if !(self.kappa > -(N as f64)) {
            return Err(Error::Config("kappa must exceed -n so that n+λ > 0".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Result<UtWeights> {
        self.validate()?;
        let n = N as f64;
        let lambda = self.alpha.powi(2) * (n + self.kappa) - n;
        let scale = n + lambda;
        let wi = 1.0 / (2.0 * scale);
        let mut wm = [wi; S];
        let mut wc = [wi; S];
        wm[0] = lambda / scale;
        wc[0] = wm[0] + 1.0 - self.alpha.powi(2) + self.beta;
        Ok(UtWeights { wm, wc, gamma: scale.sqrt() })
    }
}

/// The filter itself; stateless apart from its parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnscentedKalmanFilter {
    pub params: UtParams,
}

impl UnscentedKalmanFilter {
    pub fn new(params: UtParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// The 2n+1 scaled sigma points of a belief: X₀ = μ, X_{i} = μ ± γ·L·eᵢ.
    fn sigma_points(&self, belief: &GaussianBelief) -> Result<([Vector6<f64>; S], UtWeights)> {
        let w = self.params.weights()?;
        let l = cholesky_lower(&belief.covariance)?;
        let mut pts = [belief.mean; S];
        for i in 0..N {
            let col = l.column(i) * w.gamma;
            pts[1 + i] += col;
            pts[1 + N + i] -= col;
        }
        Ok((pts, w))
    }

    /// Time update through an arbitrary flow map: propagate every sigma
    /// point, re-form the Gaussian, and add the discrete process noise.
    pub fn predict_through<F>(
        &self,
        belief: &GaussianBelief,
        mut flow: F,
        q_discrete: &Matrix6<f64>,
    ) -> Result<GaussianBelief>
    where
        F: FnMut(&Vector6<f64>) -> Result<Vector6<f64>>,
    {
        belief.validate()?;
        let (points, w) = self.sigma_points(belief)?;
        let mut propagated = [Vector6::zeros(); S];
        for (i, p) in points.iter().enumerate() {
            propagated[i] = flow(p)?;
        }
        let mut mean = Vector6::zeros();
        for i in 0..S {
            mean += propagated[i] * w.wm[i];
        }
        let mut cov = *q_discrete;
        for i in 0..S {
            let d = propagated[i] - mean;
            cov += d * d.transpose() * w.wc[i];
        }
        Ok(GaussianBelief::new(mean, cov))
    }

    /// Time update: propagate every sigma point through the noise-free flow
    /// from `t0` to `t1`, then re-form the Gaussian and add the accumulated
    /// process noise (t1−t0)·Q.
    pub fn predict(
        &self,
        belief: &GaussianBelief,
        t0: f64,
        t1: f64,
        env: &Environment,
    ) -> Result<GaussianBelief> {
        self.predict_through(
            belief,
            |p| {
                Ok(crate::dynamics::propagate(
                    &StateVector::from_vector(p),
                    t0,
                    t1,
                    env.int_dt,
                    &env.constants,
                    &env.drag,
                )?
                .to_vector())
            },
            &env.process_noise.discrete_covariance(t1 - t0),
        )
    }

    /// Measurement update through an arbitrary measurement map.
    ///
    /// `measure` maps a state into measurement space, `residual(a, b)`
    /// forms the measurement-space difference a ⊖ b (wrapping angles where
    /// needed), and `recombine(z0, offset)` folds a weighted residual
    /// offset back onto the central point's measurement. Accumulating
    /// through residuals about the central point keeps sigma points that
    /// straddle a wrap cut from corrupting the predicted measurement.
    pub fn update_through<H, D, C>(
        &self,
        belief: &GaussianBelief,
        z: &Vector2<f64>,
        mut measure: H,
        noise: &Matrix2<f64>,
        residual: D,
        recombine: C,
    ) -> Result<GaussianBelief>
    where
        H: FnMut(&Vector6<f64>) -> Result<Vector2<f64>>,
        D: Fn(&Vector2<f64>, &Vector2<f64>) -> Vector2<f64>,
        C: Fn(&Vector2<f64>, &Vector2<f64>) -> Vector2<f64>,
    {
        belief.validate()?;
        let (points, w) = self.sigma_points(belief)?;
        let z0 = measure(&points[0])?;
        let mut residuals = [Vector2::zeros(); S];
        for i in 1..S {
            let zi = measure(&points[i])?;
            residuals[i] = residual(&zi, &z0);
        }

        // Predicted measurement: z₀ plus the weighted residual offset.
        let mut offset = Vector2::zeros();
        for i in 0..S {
            offset += residuals[i] * w.wm[i];
        }
        let z_bar = recombine(&z0, &offset);

        // Innovation covariance and state–measurement cross-covariance.
        let mut s_mat = *noise;
        let mut p_xz = SMatrix::<f64, 6, 2>::zeros();
        for i in 0..S {
            let dz = residuals[i] - offset;
            let dx = points[i] - belief.mean;
            s_mat += dz * dz.transpose() * w.wc[i];
            p_xz += dx * dz.transpose() * w.wc[i];
        }
        s_mat = Matrix2::from(symmetrize(&s_mat));

        // Gain K = P_xz S⁻¹ via the SPD solve S Kᵀ = P_xzᵀ.
        let k = solve_spd(&s_mat, &p_xz.transpose())?.transpose();
        let innovation = residual(z, &z_bar);
        let mean = belief.mean + k * innovation;
        let cov = belief.covariance - k * s_mat * k.transpose();
        let posterior = GaussianBelief::new(mean, cov);
        posterior.validate()?;
        Ok(posterior)
    }

    /// Measurement update with an azimuth/elevation pair from the rotating
    /// ground station.
    pub fn update(
        &self,
        belief: &GaussianBelief,
        z: &Vector2<f64>,
        t: f64,
        env: &Environment,
    ) -> Result<GaussianBelief> {
        self.update_through(
            belief,
            z,
            |p| env.observation.observe(&StateVector::from_vector(p), t),
            &env.observation.noise_covariance(),
            |a, b| ObservationModel::residual(a, b),
            |z0, offset| Vector2::new(wrap_angle(z0.x + offset.x), z0.y + offset.y),
        )
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{flow_jacobian, ProcessNoise};
    use crate::observation::ecef_from_inertial;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::Vector3;

    fn env() -> Environment {
        Environment::default()
    }

    fn tracked_belief() -> GaussianBelief {
        let mean = Vector6::new(7800.0, 0.0, 0.0, 0.0, 4.8396, 4.8396);
        GaussianBelief::from_std_devs(mean, [5.0, 5.0, 5.0, 1e-3, 1e-3, 1e-3])
    }

    #[test]
    fn default_weights_take_classical_values() {
        let w = UtParams::default().weights().unwrap();
        assert_eq!(w.wm[0], -1.0);
        assert_eq!(w.wc[0], 1.0);
        assert_eq!(w.wm[1], 1.0 / 6.0);
        assert_eq!(w.wc[12], 1.0 / 6.0);
        assert_relative_eq!(w.gamma, 3.0_f64.sqrt(), max_relative = 1e-15);
        let sum_m: f64 = w.wm.iter().sum();
        assert_abs_diff_eq!(sum_m, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(UtParams { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(UtParams { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(UtParams { kappa: -6.0, ..Default::default() }.validate().is_err());
        assert!(UtParams::default().validate().is_ok());
    }

    #[test]
    fn sigma_points_reconstruct_mean_and_covariance() {
        let mut cov = Matrix6::identity() * 4.0;
        cov[(0, 1)] = 1.2;
        cov[(1, 0)] = 1.2;
        cov[(3, 4)] = -0.3;
        cov[(4, 3)] = -0.3;
        let belief = GaussianBelief::new(Vector6::new(7e3, -2.0, 3.0, 0.1, 7.1, -0.4), cov);
        let filter = UnscentedKalmanFilter::default();
        let (pts, w) = filter.sigma_points(&belief).unwrap();

        let mut mean = Vector6::zeros();
        for i in 0..13 {
            mean += pts[i] * w.wm[i];
        }
        assert_abs_diff_eq!(mean, belief.mean, epsilon = 1e-9);

        let mut rebuilt = Matrix6::zeros();
        for i in 0..13 {
            let d = pts[i] - mean;
            rebuilt += d * d.transpose() * w.wc[i];
        }
        assert_abs_diff_eq!(rebuilt, belief.covariance, epsilon = 1e-9);
    }

    #[test]
    fn zero_span_predict_is_identity_without_noise() {
        let mut e = env();
        e.process_noise = ProcessNoise::isotropic(0.0).unwrap();
        let belief = tracked_belief();
        let out = UnscentedKalmanFilter::default().predict(&belief, 50.0, 50.0, &e).unwrap();
        assert_abs_diff_eq!(out.mean, belief.mean, epsilon = 1e-9);
        assert_abs_diff_eq!(out.covariance, belief.covariance, epsilon = 1e-9);
    }

    #[test]
    fn predict_adds_discrete_process_noise() {
        let mut e = env();
        e.process_noise = ProcessNoise::isotropic(1e-8).unwrap();
        let belief = tracked_belief();
        let filter = UnscentedKalmanFilter::default();
        let with_noise = filter.predict(&belief, 0.0, 30.0, &e).unwrap();
        e.process_noise = ProcessNoise::isotropic(0.0).unwrap();
        let without = filter.predict(&belief, 0.0, 30.0, &e).unwrap();
        let diff = with_noise.covariance - without.covariance;
        assert_abs_diff_eq!(diff, Matrix6::identity() * 30.0 * 1e-8, epsilon = 1e-12);
    }

    /// For a tight belief the UT moments must agree with the linearization
    /// P⁺ = F P Fᵀ + ΔQ through the true flow Jacobian.
    #[test]
    fn predict_matches_linearized_covariance_for_tight_belief() {
        let e = env();
        let mean = tracked_belief().mean;
        let belief = GaussianBelief::from_std_devs(mean, [1e-3; 6]);
        let out = UnscentedKalmanFilter::default().predict(&belief, 0.0, 10.0, &e).unwrap();

        let f = flow_jacobian(
            &StateVector::from_vector(&mean),
            0.0,
            10.0,
            e.int_dt,
            &e.constants,
            &e.drag,
        )
        .unwrap();
        let lin = f * belief.covariance * f.transpose()
            + e.process_noise.discrete_covariance(10.0);
        let rel = (out.covariance - lin).amax() / lin.amax();
        assert!(rel < 1e-5, "UT vs linearized covariance differ by {rel:.3e} relative");
    }

    #[test]
    fn update_with_predicted_measurement_keeps_mean_and_shrinks_covariance() {
        let e = env();
        let belief = tracked_belief();
        let filter = UnscentedKalmanFilter::default();
        // Feed the filter its own predicted angles.
        let z = e.observation.observe(&belief.mean_state(), 0.0).unwrap();
        let post = filter.update(&belief, &z, 0.0, &e).unwrap();
        assert_abs_diff_eq!(post.mean, belief.mean, epsilon = 1e-6);
        let reduction = belief.covariance - post.covariance;
        let eig = reduction.symmetric_eigenvalues();
        assert!(
            eig.min() > -1e-9,
            "information must not be lost on update (min eig {:.3e})",
            eig.min()
        );
        assert!(
            post.covariance.trace() < belief.covariance.trace(),
            "an informative measurement must shrink the covariance"
        );
    }

    /// EKF oracle: with a tight prior the UT update must match the textbook
    /// linearized update built from the measurement Jacobian.
    #[test]
    fn update_matches_ekf_for_tight_belief() {
        let e = env();
        let mean = Vector6::new(6878.637, 200.0, 300.0, 0.0, 7.5, 0.2);
        let belief = GaussianBelief::from_std_devs(mean, [1e-3, 1e-3, 1e-3, 1e-5, 1e-5, 1e-5]);
        let filter = UnscentedKalmanFilter::default();
        let state = belief.mean_state();

        let h = e.observation.measurement_jacobian(&state, 0.0).unwrap();
        let z_hat = e.observation.observe(&state, 0.0).unwrap();
        let z = z_hat + Vector2::new(1e-5, -2e-5);

        let s = h * belief.covariance * h.transpose() + e.observation.noise_covariance();
        let k = belief.covariance * h.transpose() * s.try_inverse().unwrap();
        let ekf_mean = belief.mean + k * (z - z_hat);
        let ekf_cov = belief.covariance - k * s * k.transpose();

        let post = filter.update(&belief, &z, 0.0, &e).unwrap();
        assert!((post.mean - ekf_mean).norm() < 1e-9, "mean deviates from EKF oracle");
        assert!(
            (post.covariance - ekf_cov).amax() < 1e-13,
            "covariance deviates from EKF oracle by {:.3e}",
            (post.covariance - ekf_cov).amax()
        );
    }

    /// A measurement on the far side of the ±π azimuth cut must pull the
    /// estimate by the short way round, not by ~2π.
    #[test]
    fn update_is_wrap_safe_across_the_azimuth_cut() {
        let e = env();
        // Station-relative direction almost exactly opposite +x: azimuth ≈ π.
        let rho = Vector3::new(-800.0, 0.08, 0.0);
        let r_inertial = ecef_from_inertial(0.0, e.observation.omega_earth).transpose()
            * (e.observation.station_ecef + rho);
        let mean = Vector6::new(r_inertial.x, r_inertial.y, r_inertial.z, 0.0, 7.5, 0.0);
        let belief = GaussianBelief::from_std_devs(mean, [0.5, 0.5, 0.5, 1e-3, 1e-3, 1e-3]);
        let z_prior = e.observation.observe(&belief.mean_state(), 0.0).unwrap();
        assert!(z_prior.x > 3.14, "geometry must sit just below the cut");

        // Measured azimuth just past the cut on the negative side.
        let z = Vector2::new(-std::f64::consts::PI + 1e-4, z_prior.y);
        let post = UnscentedKalmanFilter::default().update(&belief, &z, 0.0, &e).unwrap();

        let shift = (post.mean - belief.mean).fixed_rows::<3>(0).norm();
        assert!(shift < 1.0, "wrapped residual must produce a small move, got {shift} km");
        let z_post = e.observation.observe(&post.mean_state(), 0.0).unwrap();
        let before = ObservationModel::residual(&z, &z_prior).x.abs();
        let after = ObservationModel::residual(&z, &z_post).x.abs();
        assert!(after < before, "update must move the azimuth toward the measurement");
    }

    #[test]
    fn posterior_covariance_is_exactly_symmetric() {
        let e = env();
        let belief = tracked_belief();
        let filter = UnscentedKalmanFilter::default();
        let pred = filter.predict(&belief, 0.0, 10.0, &e).unwrap();
        assert_eq!(pred.covariance, pred.covariance.transpose());
        let z = e.observation.observe(&pred.mean_state(), 10.0).unwrap();
        let post = filter.update(&pred, &z, 10.0, &e).unwrap();
        assert_eq!(post.covariance, post.covariance.transpose());
    }
}
