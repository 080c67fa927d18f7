//! Angles-only observations from a ground station fixed to the rotating
//! Earth: azimuth/elevation of the target's station-relative direction in
//! the Earth-fixed frame, a rectangular field-of-view gate, Bernoulli
//! detection, and isotropic Gaussian angle noise.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::wrap_angle;
use crate::state::StateVector;

/// One arcsecond in radians.
pub const ARCSEC: f64 = std::f64::consts::PI / (180.0 * 3600.0);

/// Rotation from the inertial frame to the Earth-fixed frame at time `t`
/// (rotation about +z by ωt).
pub fn ecef_from_inertial(t: f64, omega_earth: f64) -> Matrix3<f64> {
    let (s, c) = (omega_earth * t).sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Ground sensor producing azimuth/elevation pairs `z = [φ, θ]` (rad).
#[derive(Clone, Debug)]
pub struct ObservationModel {
    /// Station location in the Earth-fixed frame (km).
    pub station_ecef: Vector3<f64>,
    /// Per-axis angle-noise standard deviation (rad); 0 means noise-free.
    pub noise_std: f64,
    /// Probability that an in-view target actually yields a measurement.
    pub prob_detection: f64,
    /// Field-of-view half-width in azimuth (rad, closed bound).
    pub fov_azimuth: f64,
    /// Field-of-view half-width in elevation (rad, closed bound).
    pub fov_elevation: f64,
    /// Earth spin rate used for the frame rotation (rad/s).
    pub omega_earth: f64,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            station_ecef: Vector3::new(6378.137, 0.0, 0.0),
            noise_std: 3.9 * ARCSEC,
            prob_detection: 0.9,
            fov_azimuth: 75.0_f64.to_radians(),
            fov_elevation: 90.0_f64.to_radians(),
            omega_earth: 7.2921159e-5,
        }
    }
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if !self.station_ecef.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("station position must be finite".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.prob_detection) {
            return Err(Error::Config("prob_detection must lie in [0, 1]".into()));
        }
        if !(self.fov_azimuth > 0.0 && self.fov_azimuth <= std::f64::consts::PI) {
            return Err(Error::Config("fov_azimuth must lie in (0, π]".into()));
        }
        if !(self.fov_elevation > 0.0 && self.fov_elevation <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("fov_elevation must lie in (0, π/2]".into()));
        }
        if !(self.omega_earth > 0.0) {
            return Err(Error::Config("omega_earth must be positive".into()));
        }
        Ok(())
    }

    /// Station position in the inertial frame at time `t`.
    pub fn station_inertial(&self, t: f64) -> Vector3<f64> {
        ecef_from_inertial(t, self.omega_earth).transpose() * self.station_ecef
    }

    /// Station-relative target vector expressed in the Earth-fixed frame.
    fn relative_ecef(&self, state: &StateVector, t: f64) -> Vector3<f64> {
        ecef_from_inertial(t, self.omega_earth) * state.position - self.station_ecef
    }

    /// Noise-free measurement `[azimuth, elevation]` (rad). Azimuth is
    /// atan2(ρ_y, ρ_x) ∈ (−π, π]; elevation is asin(ρ_z/‖ρ‖) ∈ [−π/2, π/2].
    pub fn observe(&self, state: &StateVector, t: f64) -> Result<Vector2<f64>> {
        state.validate()?;
        let rho = self.relative_ecef(state, t);
        let range = rho.norm();
        if !(range > 0.0) {
            return Err(Error::Domain("target coincides with the station".into()));
        }
        let azimuth = rho.y.atan2(rho.x);
        let elevation = (rho.z / range).clamp(-1.0, 1.0).asin();
        Ok(Vector2::new(azimuth, elevation))
    }

    /// Whether the target sits inside the (closed) field of view at `t`.
    pub fn in_fov(&self, state: &StateVector, t: f64) -> Result<bool> {
        let z = self.observe(state, t)?;
        Ok(z.x.abs() <= self.fov_azimuth && z.y.abs() <= self.fov_elevation)
    }

    /// Measurement-noise covariance σ²·I₂.
    pub fn noise_covariance(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.noise_std.powi(2)
    }

    /// Component-wise angle residual `z − ẑ`, each wrapped to (−π, π].
    pub fn residual(z: &Vector2<f64>, z_hat: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(wrap_angle(z.x - z_hat.x), wrap_angle(z.y - z_hat.y))
    }

    /// Simulate the sensor at time `t`: `None` when the target is outside
    /// the field of view or the detection draw fails, otherwise the
    /// noise-corrupted angles. Consumes one uniform draw per call plus two
    /// normal draws on detection.
    pub fn generate_measurement(
        &self,
        truth: &StateVector,
        t: f64,
        rng: &mut impl Rng,
    ) -> Result<Option<Vector2<f64>>> {
        if !self.in_fov(truth, t)? {
            return Ok(None);
        }
        if rng.gen::<f64>() >= self.prob_detection {
            return Ok(None);
        }
        let mut z = self.observe(truth, t)?;
        if self.noise_std > 0.0 {
            z.x = wrap_angle(z.x + self.noise_std * rng.sample::<f64, _>(StandardNormal));
            z.y += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            z.y = z.y.clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        }
        Ok(Some(z))
    }

    /// Measurement Jacobian H = ∂[φ, θ]/∂x (2×6) by central differences on
    /// the position block; the angles do not depend on velocity.
    pub fn measurement_jacobian(
        &self,
        state: &StateVector,
        t: f64,
    ) -> Result<nalgebra::SMatrix<f64, 2, 6>> {
        let x0 = state.to_vector();
        let mut h = nalgebra::SMatrix::<f64, 2, 6>::zeros();
        for i in 0..3 {
            let step = (1e-7 * x0[i].abs()).max(1e-6);
            let mut plus = x0;
            plus[i] += step;
            let mut minus = x0;
            minus[i] -= step;
            let denom = plus[i] - minus[i];
            let zp = self.observe(&StateVector::from_vector(&plus), t)?;
            let zm = self.observe(&StateVector::from_vector(&minus), t)?;
            let diff = Self::residual(&zp, &zm) / denom;
            h.set_column(i, &diff);
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
