//! Perturbed two-body dynamics: point-mass gravity, the J2 oblateness term,
//! and exponential-atmosphere drag, integrated with fixed-step RK4.
//!
//! Units are km, km/s, s and rad throughout. Drag inputs use the customary
//! mixed units (A/m in m²/kg, density in kg/m³); the conversion so that
//! accelerations emerge in km/s² is handled internally.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, symmetrize};
use crate::state::StateVector;

/// Smallest admissible integrator step (s); below this the step count
/// explodes and the request is treated as a configuration error.
pub const MIN_STEP: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Parameter types
// ---------------------------------------------------------------------------

/// Earth gravitational and rotational constants (WGS-84 values by default).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants {
    /// Gravitational parameter GM (km³/s²).
    pub mu: f64,
    /// Dimensionless J2 zonal-harmonic coefficient; 0 disables the term.
    pub j2: f64,
    /// Equatorial radius (km).
    pub r_eq: f64,
    /// Spin rate (rad/s).
    pub omega_earth: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu: 398_600.4418,
            j2: 1.08262668e-3,
            r_eq: 6378.137,
            omega_earth: 7.2921159e-5,
        }
    }
}

impl PhysicalConstants {
    /// Same constants with the oblateness term switched off.
    pub fn two_body(self) -> Self {
        Self { j2: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be positive".into()));
        }
        if !(self.r_eq > 0.0) {
            return Err(Error::Config("r_eq must be positive".into()));
        }
        if !(self.omega_earth > 0.0) {
            return Err(Error::Config("omega_earth must be positive".into()));
        }
        // j2 = 0 is the documented switch for pure two-body runs.
        if !(0.0..1.0).contains(&self.j2) {
            return Err(Error::Config("j2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Exponential-atmosphere drag parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DragParams {
    /// Area-to-mass ratio A/m (m²/kg); 0 disables drag entirely.
    pub area_to_mass: f64,
    /// Drag coefficient C_d (dimensionless).
    pub cd: f64,
    /// Reference density ρ₀ (kg/m³).
    pub rho0: f64,
    /// Geocentric reference radius r₀ (km).
    pub r0: f64,
    /// Scale height H (km): density falls by a factor e per H of altitude.
    pub scale_height: f64,
}

impl Default for DragParams {
    fn default() -> Self {
        Self {
            area_to_mass: 0.01,
            cd: 2.2,
            rho0: 3.614e-13,
            r0: 6378.137 + 700.0,
            scale_height: 88.667,
        }
    }
}

impl DragParams {
    /// Drag disabled (zero area-to-mass ratio).
    pub fn disabled() -> Self {
        Self { area_to_mass: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        // area_to_mass = 0 is the documented switch for drag-free runs.
        if !(self.area_to_mass >= 0.0) {
            return Err(Error::Config("area_to_mass must be non-negative".into()));
        }
        if !(self.cd > 0.0 && self.rho0 > 0.0 && self.r0 > 0.0 && self.scale_height > 0.0) {
            return Err(Error::Config(
                "cd, rho0, r0 and scale_height must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Additive process noise entering the state equation as a white 6-D
/// disturbance with the given covariance *rate* (units per second).
///
/// The Cholesky factor is cached at construction; over a macro-step of
/// length Δ the injected sample is √Δ·L·ξ with ξ ~ N(0, I₆), so the
/// accumulated covariance over any span t is exactly t·covariance.
#[derive(Clone, Debug)]
pub struct ProcessNoise {
    covariance: Matrix6<f64>,
    factor: Matrix6<f64>,
}

impl ProcessNoise {
    /// Baseline diffusion strength (1e-10·I₆ per second).
    pub const BASELINE_INTENSITY: f64 = 1e-10;

    pub fn new(covariance: Matrix6<f64>) -> Result<Self> {
        let max_abs = covariance.amax();
        if max_abs > 0.0 {
            let asym = (covariance - covariance.transpose()).amax();
            if asym > 1e-12 * max_abs {
                return Err(Error::Config("process-noise covariance must be symmetric".into()));
            }
        }
        let sym = symmetrize(&covariance);
        let factor = if max_abs == 0.0 {
            Matrix6::zeros() // noise-free; jittered factorization would invent noise
        } else {
            cholesky_lower(&sym)
                .map_err(|e| Error::Config(format!("process-noise covariance not PSD: {e}")))?
        };
        Ok(Self { covariance: sym, factor })
    }

    /// Isotropic noise with the given per-second variance on every component.
    pub fn isotropic(variance_rate: f64) -> Result<Self> {
        if !(variance_rate >= 0.0) {
            return Err(Error::Config("process-noise variance must be non-negative".into()));
        }
        Self::new(Matrix6::identity() * variance_rate)
    }

    /// The documented baseline: 1e-10·I₆, optionally rescaled.
    pub fn baseline(scale: f64) -> Result<Self> {
        Self::isotropic(Self::BASELINE_INTENSITY * scale)
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    /// Covariance accumulated over a span of `dt` seconds.
    pub fn discrete_covariance(&self, dt: f64) -> Matrix6<f64> {
        self.covariance * dt
    }

    fn sample(&self, dt: f64, rng: &mut impl Rng) -> Vector6<f64> {
        let xi = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.factor * xi * dt.sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.covariance.amax() == 0.0
    }
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self::baseline(1.0).expect("baseline noise is valid")
    }
}

// ---------------------------------------------------------------------------
// Acceleration model
// ---------------------------------------------------------------------------

/// Exponential atmospheric density ρ(r) = ρ₀·exp(−(r−r₀)/H) in kg/m³,
/// with r the geocentric radius in km.
pub fn atmospheric_density(r: f64, drag: &DragParams) -> f64 {
    drag.rho0 * (-(r - drag.r0) / drag.scale_height).exp()
}

/// Total inertial acceleration (km/s²): point-mass gravity + J2 + drag.
///
/// Drag acts against the velocity relative to the co-rotating atmosphere,
/// v_rel = v − ω × r.
pub fn total_acceleration(
    state: &StateVector,
    consts: &PhysicalConstants,
    drag: &DragParams,
) -> Result<Vector3<f64>> {
    state.validate()?;
    let r_vec = state.position;
    let r = r_vec.norm();

    // Inverse-square gravity.
    let mut accel = r_vec * (-consts.mu / (r * r * r));

    // Oblateness.
    if consts.j2 != 0.0 {
        let zr2 = (r_vec.z / r).powi(2);
        let scale = -1.5 * consts.j2 * (consts.mu / (r * r)) * (consts.r_eq / r).powi(2);
        accel += scale
            * Vector3::new(
                (1.0 - 5.0 * zr2) * r_vec.x / r,
                (1.0 - 5.0 * zr2) * r_vec.y / r,
                (3.0 - 5.0 * zr2) * r_vec.z / r,
            );
    }

    // Drag against the co-rotating atmosphere.
    if drag.area_to_mass != 0.0 {
        let omega = Vector3::new(0.0, 0.0, consts.omega_earth);
        let v_rel = state.velocity - omega.cross(&r_vec);
        let v_rel_mag = v_rel.norm();
        if v_rel_mag > 0.0 {
            let rho = atmospheric_density(r, drag);
            // ρ [kg/m³] · (A/m) [m²/kg] · v² [km²/s²] needs a factor 1e3
            // to come out in km/s².
            let coeff = -0.5 * drag.cd * drag.area_to_mass * rho * 1.0e3 * v_rel_mag;
            accel += v_rel * coeff;
        }
    }

    Ok(accel)
}

/// State derivative [v; a] of the deterministic flow.
fn state_derivative(
    state: &StateVector,
    consts: &PhysicalConstants,
    drag: &DragParams,
) -> Result<Vector6<f64>> {
    let a = total_acceleration(state, consts, drag)?;
    let mut d = Vector6::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&state.velocity);
    d.fixed_rows_mut::<3>(3).copy_from(&a);
    Ok(d)
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

fn rk4_step(
    state: &StateVector,
    h: f64,
    consts: &PhysicalConstants,
    drag: &DragParams,
) -> Result<StateVector> {
    let x0 = state.to_vector();
    let k1 = state_derivative(state, consts, drag)?;
    let k2 = state_derivative(&StateVector::from_vector(&(x0 + k1 * (h / 2.0))), consts, drag)?;
    let k3 = state_derivative(&StateVector::from_vector(&(x0 + k2 * (h / 2.0))), consts, drag)?;
    let k4 = state_derivative(&StateVector::from_vector(&(x0 + k3 * h)), consts, drag)?;
    let next = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(StateVector::from_vector(&next))
}

/// Split a span into full steps of `dt` plus an optional remainder step.
fn step_schedule(span: f64, dt: f64) -> Result<(u64, f64)> {
    if span < 0.0 {
        return Err(Error::Domain("t1 must not precede t0".into()));
    }
    if dt < MIN_STEP {
        return Err(Error::Config(format!("integrator step {dt} s is below {MIN_STEP} s")));
    }
    let full = (span / dt + 1e-9).floor() as u64;
    let rem = span - full as f64 * dt;
    Ok((full, if rem > 1e-9 { rem } else { 0.0 }))
}

/// Fixed-step RK4 integration of the deterministic flow from `t0` to `t1`.
pub fn propagate(
    state: &StateVector,
    t0: f64,
    t1: f64,
    dt: f64,
    consts: &PhysicalConstants,
    drag: &DragParams,
) -> Result<StateVector> {
    let (full, rem) = step_schedule(t1 - t0, dt)?;
    let mut s = *state;
    for _ in 0..full {
        s = rk4_step(&s, dt, consts, drag)?;
    }
    if rem > 0.0 {
        s = rk4_step(&s, rem, consts, drag)?;
    }
    Ok(s)
}

/// As [`propagate`], but injecting a process-noise sample √h·L·ξ after every
/// macro-step of length h (Euler–Maruyama treatment of the additive
/// disturbance). Deterministic for a fixed generator state.
pub fn propagate_with_noise(
    state: &StateVector,
    t0: f64,
    t1: f64,
    dt: f64,
    consts: &PhysicalConstants,
    drag: &DragParams,
    noise: &ProcessNoise,
    rng: &mut impl Rng,
) -> Result<StateVector> {
    let (full, rem) = step_schedule(t1 - t0, dt)?;
    let mut s = *state;
    for _ in 0..full {
        s = rk4_step(&s, dt, consts, drag)?;
        s = StateVector::from_vector(&(s.to_vector() + noise.sample(dt, rng)));
    }
    if rem > 0.0 {
        s = rk4_step(&s, rem, consts, drag)?;
        s = StateVector::from_vector(&(s.to_vector() + noise.sample(rem, rng)));
    }
    Ok(s)
}

/// Central finite-difference Jacobian of the noise-free flow map over
/// [t0, t1], with per-column steps h_i = max(1e-6, 1e-7·|state_i|).
pub fn flow_jacobian(
    state: &StateVector,
    t0: f64,
    t1: f64,
    dt: f64,
    consts: &PhysicalConstants,
    drag: &DragParams,
) -> Result<Matrix6<f64>> {
    let x0 = state.to_vector();
    let mut jac = Matrix6::zeros();
    for i in 0..6 {
        let h = (1e-7 * x0[i].abs()).max(1e-6);
        let mut plus = x0;
        plus[i] += h;
        let mut minus = x0;
        minus[i] -= h;
        // Divide by the realized (post-rounding) step, not the nominal one.
        let denom = plus[i] - minus[i];
        let fp = propagate(&StateVector::from_vector(&plus), t0, t1, dt, consts, drag)?;
        let fm = propagate(&StateVector::from_vector(&minus), t0, t1, dt, consts, drag)?;
        let col = (fp.to_vector() - fm.to_vector()) / denom;
        jac.set_column(i, &col);
    }
    Ok(jac)
}

// ---------------------------------------------------------------------------
// Keplerian utilities
// ---------------------------------------------------------------------------

/// Specific orbital energy v²/2 − μ/r (km²/s²).
pub fn specific_energy(state: &StateVector, consts: &PhysicalConstants) -> f64 {
    0.5 * state.speed().powi(2) - consts.mu / state.radius()
}

/// Specific angular momentum r × v (km²/s).
pub fn specific_angular_momentum(state: &StateVector) -> Vector3<f64> {
    state.position.cross(&state.velocity)
}

/// Semi-major axis from vis-viva: 1/a = 2/r − v²/μ. Requires an elliptic
/// (negative-energy) state.
pub fn semi_major_axis(state: &StateVector, consts: &PhysicalConstants) -> Result<f64> {
    state.validate()?;
    let inv_a = 2.0 / state.radius() - state.speed().powi(2) / consts.mu;
    if inv_a <= 0.0 {
        return Err(Error::Domain(format!(
            "state is not elliptic (specific energy {:.6e} km²/s² ≥ 0)",
            specific_energy(state, consts)
        )));
    }
    Ok(1.0 / inv_a)
}

/// Keplerian orbital period T = 2π·√(a³/μ) (s).
pub fn keplerian_period(state: &StateVector, consts: &PhysicalConstants) -> Result<f64> {
    let a = semi_major_axis(state, consts)?;
    Ok(std::f64::consts::TAU * (a.powi(3) / consts.mu).sqrt())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::FRAC_PI_4;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    /// Case-1 initial state: 45°-inclined ellipse, apoapsis 7800 km.
    fn case1_state() -> StateVector {
        StateVector::from_array([
            7800.0,
            0.0,
            0.0,
            0.0,
            6.8443 * FRAC_PI_4.cos(),
            6.8443 * FRAC_PI_4.sin(),
        ])
    }

    fn circular_state(r: f64) -> StateVector {
        let v = (consts().mu / r).sqrt();
        StateVector::from_array([r, 0.0, 0.0, 0.0, v, 0.0])
    }

    // -- acceleration ------------------------------------------------------

    #[test]
    fn two_body_acceleration_matches_inverse_square_law() {
        let s = StateVector::from_array([7000.0, 0.0, 0.0, 0.0, 7.546, 0.0]);
        let c = consts().two_body();
        let a = total_acceleration(&s, &c, &DragParams::disabled()).unwrap();
        let expected = -c.mu / 7000.0_f64.powi(2); // ≈ −8.1347e-3 km/s²
        assert_relative_eq!(a.x, expected, max_relative = 1e-12);
        assert_relative_eq!(a.x, -0.0081347, max_relative = 1e-4);
        assert_eq!(a.y, 0.0);
        assert_eq!(a.z, 0.0);
    }

    #[test]
    fn equatorial_state_has_no_out_of_plane_j2_acceleration() {
        let s = StateVector::from_array([7000.0, 1234.0, 0.0, 1.0, 7.0, 0.5]);
        let c = consts();
        let with_j2 = total_acceleration(&s, &c, &DragParams::disabled()).unwrap();
        let without = total_acceleration(&s, &c.two_body(), &DragParams::disabled()).unwrap();
        let j2_only = with_j2 - without;
        assert_eq!(j2_only.z, 0.0, "z=0 symmetry must zero the out-of-plane J2 term exactly");
        assert!(j2_only.x.abs() > 0.0, "in-plane J2 components must be present");
    }

    #[test]
    fn drag_vanishes_for_atmosphere_corotating_velocity() {
        let c = consts().two_body();
        let r = Vector3::new(7000.0, 0.0, 0.0);
        let v_corot = Vector3::new(0.0, 0.0, c.omega_earth).cross(&r); // v_rel = 0
        let s = StateVector::new(r, v_corot);
        let with_drag = total_acceleration(&s, &c, &DragParams::default()).unwrap();
        let no_drag = total_acceleration(&s, &c, &DragParams::disabled()).unwrap();
        assert_eq!(with_drag, no_drag, "zero relative velocity must produce zero drag");
    }

    #[test]
    fn acceleration_rejects_zero_radius() {
        let s = StateVector::from_array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(total_acceleration(&s, &consts(), &DragParams::disabled()).is_err());
    }

    // -- atmosphere --------------------------------------------------------

    #[test]
    fn density_scale_height_ladder() {
        let d = DragParams::default();
        assert_eq!(atmospheric_density(d.r0, &d), d.rho0);
        assert_relative_eq!(
            atmospheric_density(d.r0 + d.scale_height, &d),
            d.rho0 / std::f64::consts::E,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            atmospheric_density(d.r0 + 2.0 * d.scale_height, &d),
            d.rho0 / std::f64::consts::E.powi(2),
            max_relative = 1e-14
        );
        assert!(
            atmospheric_density(d.r0 + 1.0, &d) < atmospheric_density(d.r0, &d),
            "density must decrease with radius"
        );
    }

    // -- propagation -------------------------------------------------------

    #[test]
    fn zero_span_propagation_is_identity() {
        let s = case1_state();
        let out = propagate(&s, 100.0, 100.0, 1.0, &consts(), &DragParams::default()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn undersized_step_is_a_configuration_error() {
        let s = case1_state();
        let err = propagate(&s, 0.0, 10.0, 1e-9, &consts().two_body(), &DragParams::disabled());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn circular_orbit_returns_to_start_after_one_period() {
        let c = consts().two_body();
        let s = circular_state(7000.0);
        let period = keplerian_period(&s, &c).unwrap();
        let out = propagate(&s, 0.0, period, 1.0, &c, &DragParams::disabled()).unwrap();
        let dr = (out.position - s.position).norm();
        let dv = (out.velocity - s.velocity).norm();
        assert!(dr < 1e-6, "position return error {dr:.3e} km exceeds 1e-6 km");
        assert!(dv < 1e-9, "velocity return error {dv:.3e} km/s exceeds 1e-9 km/s");
    }

    #[test]
    fn two_body_flow_conserves_energy_and_angular_momentum() {
        let c = consts().two_body();
        let s = case1_state();
        let period = keplerian_period(&s, &c).unwrap();
        let e0 = specific_energy(&s, &c);
        let h0 = specific_angular_momentum(&s);
        let out = propagate(&s, 0.0, period, 1.0, &c, &DragParams::disabled()).unwrap();
        let de = ((specific_energy(&out, &c) - e0) / e0).abs();
        let dh = (specific_angular_momentum(&out) - h0).norm() / h0.norm();
        assert!(de < 1e-9, "energy drift {de:.3e} over one period exceeds 1e-9");
        assert!(dh < 1e-9, "angular-momentum drift {dh:.3e} exceeds 1e-9");
    }

    #[test]
    fn j2_flow_conserves_axial_angular_momentum() {
        let c = consts();
        let s = case1_state();
        let period = keplerian_period(&s, &c).unwrap();
        let hz0 = specific_angular_momentum(&s).z;
        let out = propagate(&s, 0.0, period, 1.0, &c, &DragParams::disabled()).unwrap();
        let drift = ((specific_angular_momentum(&out).z - hz0) / hz0).abs();
        assert!(drift < 1e-9, "axisymmetric potential must conserve h_z (drift {drift:.3e})");
    }

    #[test]
    fn drag_monotonically_removes_energy() {
        // Low circular orbit at the density reference altitude, stepped
        // macro-step by macro-step.
        let c = consts().two_body();
        let d = DragParams::default();
        let mut s = circular_state(d.r0);
        let mut energy = specific_energy(&s, &c);
        for k in 0..100 {
            s = propagate(&s, k as f64, (k + 1) as f64, 1.0, &c, &d).unwrap();
            let e = specific_energy(&s, &c);
            assert!(e <= energy, "drag must not add energy (step {k}: {energy} → {e})");
            energy = e;
        }
    }

    #[test]
    fn flow_composition_is_exact_on_step_multiples() {
        let c = consts();
        let d = DragParams::default();
        let s = case1_state();
        let direct = propagate(&s, 0.0, 100.0, 10.0, &c, &d).unwrap();
        let mid = propagate(&s, 0.0, 50.0, 10.0, &c, &d).unwrap();
        let composed = propagate(&mid, 50.0, 100.0, 10.0, &c, &d).unwrap();
        assert_eq!(direct, composed, "composition over step multiples must be bitwise exact");
    }

    #[test]
    fn noisy_propagation_is_reproducible_and_noise_scaled() {
        let c = consts().two_body();
        let d = DragParams::disabled();
        let s = circular_state(7000.0);
        let noise = ProcessNoise::baseline(1.0).unwrap();
        let mut rng_a = ChaCha12Rng::seed_from_u64(99);
        let mut rng_b = ChaCha12Rng::seed_from_u64(99);
        let out_a = propagate_with_noise(&s, 0.0, 60.0, 1.0, &c, &d, &noise, &mut rng_a).unwrap();
        let out_b = propagate_with_noise(&s, 0.0, 60.0, 1.0, &c, &d, &noise, &mut rng_b).unwrap();
        assert_eq!(out_a, out_b, "identical seeds must agree bitwise");
        let clean = propagate(&s, 0.0, 60.0, 1.0, &c, &d).unwrap();
        let dr = (out_a.to_vector() - clean.to_vector()).norm();
        // 60 accumulated kicks of σ≈1e-5 per axis: visible but far below a metre.
        assert!(dr > 0.0 && dr < 1e-2, "noise displacement {dr:.3e} outside expected band");
    }

    // -- flow Jacobian -----------------------------------------------------

    #[test]
    fn zero_span_jacobian_is_identity() {
        let j = flow_jacobian(&case1_state(), 5.0, 5.0, 1.0, &consts(), &DragParams::default())
            .unwrap();
        assert_abs_diff_eq!(j, Matrix6::identity(), epsilon = 1e-12);
    }

    /// Independent oracle: integrate the variational equations Φ̇ = A(X)Φ for
    /// the pure two-body field, A = [[0, I], [μ(3r̂r̂ᵀ−I)/r³, 0]], alongside
    /// the trajectory with the same RK4 scheme.
    #[test]
    fn jacobian_matches_variational_equations_for_two_body() {
        let c = consts().two_body();
        let d = DragParams::disabled();
        let s0 = case1_state();
        let span = 10.0;
        let dt = 1.0;

        let grav_gradient = |p: &Vector3<f64>| -> nalgebra::Matrix3<f64> {
            let r = p.norm();
            let outer = p * p.transpose();
            (outer * (3.0 / r.powi(2)) - nalgebra::Matrix3::identity()) * (c.mu / r.powi(3))
        };
        let mut x = s0;
        let mut phi = Matrix6::identity();
        let a_of = |state: &StateVector| {
            let mut a = Matrix6::zeros();
            a.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
            a.fixed_view_mut::<3, 3>(3, 0).copy_from(&grav_gradient(&state.position));
            a
        };
        let steps = (span / dt) as usize;
        for _ in 0..steps {
            // RK4 on the augmented system (X, Φ).
            let x0 = x.to_vector();
            let f = |xv: &Vector6<f64>, pm: &Matrix6<f64>| {
                let st = StateVector::from_vector(xv);
                let dx = state_derivative(&st, &c, &d).unwrap();
                let dp = a_of(&st) * pm;
                (dx, dp)
            };
            let (k1x, k1p) = f(&x0, &phi);
            let (k2x, k2p) = f(&(x0 + k1x * (dt / 2.0)), &(phi + k1p * (dt / 2.0)));
            let (k3x, k3p) = f(&(x0 + k2x * (dt / 2.0)), &(phi + k2p * (dt / 2.0)));
            let (k4x, k4p) = f(&(x0 + k3x * dt), &(phi + k3p * dt));
            x = StateVector::from_vector(&(x0 + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0)));
            phi += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
        }

        let fd = flow_jacobian(&s0, 0.0, span, dt, &c, &d).unwrap();
        let max_diff = (fd - phi).amax();
        assert!(max_diff < 1e-6, "finite-difference vs variational Jacobian differ by {max_diff:.3e}");
    }

    #[test]
    fn conservative_flow_has_unit_jacobian_determinant() {
        // J2 on, drag off: phase-space volume is preserved.
        let j = flow_jacobian(&case1_state(), 0.0, 10.0, 1.0, &consts(), &DragParams::disabled())
            .unwrap();
        let det = j.determinant();
        assert!((det - 1.0).abs() < 1e-6, "determinant {det} deviates from 1 beyond 1e-6");
    }

    // -- Keplerian utilities -------------------------------------------------

    #[test]
    fn case1_period_matches_reported_value() {
        let t = keplerian_period(&case1_state(), &consts()).unwrap();
        assert!((t - 6080.0).abs() / 6080.0 < 0.01, "case-1 period {t:.1} s not within 1% of 6080 s");
    }

    #[test]
    fn case2_period_follows_vis_viva() {
        // The stated case-2 initial speed of 7.5989 km/s at r = 6800 km gives
        // a = 6700.05 km and hence T ≈ 5457.9 s. (A circular orbit at this
        // radius would have T ≈ 5580.5 s; the state is not circular.)
        let s = StateVector::from_array([
            6800.0,
            0.0,
            0.0,
            0.0,
            7.5989 * (std::f64::consts::PI / 30.0).cos(),
            7.5989 * (std::f64::consts::PI / 30.0).sin(),
        ]);
        let a = semi_major_axis(&s, &consts()).unwrap();
        assert_relative_eq!(a, 6700.05, max_relative = 1e-4);
        let t = keplerian_period(&s, &consts()).unwrap();
        assert_relative_eq!(t, 5457.93, max_relative = 1e-4);
    }

    #[test]
    fn circular_period_matches_closed_form() {
        let r = 7000.0;
        let s = circular_state(r);
        let v = s.speed();
        let t = keplerian_period(&s, &consts()).unwrap();
        assert_relative_eq!(t, std::f64::consts::TAU * r / v, max_relative = 1e-12);
    }

    #[test]
    fn hyperbolic_state_has_no_period() {
        let s = StateVector::from_array([7000.0, 0.0, 0.0, 0.0, 12.0, 0.0]);
        assert!(matches!(keplerian_period(&s, &consts()), Err(Error::Domain(_))));
    }
}
