//! The 6-D inertial state of the tracked object and its Gaussian belief.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, symmetrize};

/// Inertial Cartesian position (km) and velocity (km/s) of the object.
///
/// Kept as two 3-vectors for geometric work; [`StateVector::to_vector`] /
/// [`StateVector::from_vector`] convert to the stacked 6-vector used by the
/// filters ([x, y, z, vx, vy, vz]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl StateVector {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self { position, velocity }
    }

    /// Build from a stacked 6-vector [r; v].
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            velocity: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Build from a [x, y, z, vx, vy, vz] array (configuration convenience).
    pub fn from_array(a: [f64; 6]) -> Self {
        Self::from_vector(&Vector6::from_row_slice(&a))
    }

    /// Stacked 6-vector [r; v].
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    /// Geocentric radius ‖r‖ (km).
    pub fn radius(&self) -> f64 {
        self.position.norm()
    }

    /// Inertial speed ‖v‖ (km/s).
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
    }

    /// Check the type invariants: finite components and nonzero radius.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidState("non-finite state component".into()));
        }
        if self.radius() <= 0.0 {
            return Err(Error::InvalidState("position norm must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian belief over the 6-D state: mean and covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector6<f64>, covariance: Matrix6<f64>) -> Self {
        Self { mean, covariance: symmetrize(&covariance) }
    }

    /// Diagonal covariance from per-component standard deviations.
    pub fn from_std_devs(mean: Vector6<f64>, std_devs: [f64; 6]) -> Self {
        let cov = Matrix6::from_diagonal(&Vector6::from_row_slice(&std_devs).map(|s| s * s));
        Self { mean, covariance: cov }
    }

    pub fn mean_state(&self) -> StateVector {
        StateVector::from_vector(&self.mean)
    }

    pub fn validate(&self) -> Result<()> {
        StateVector::from_vector(&self.mean).validate()?;
        if !self.covariance.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidState("non-finite covariance entry".into()));
        }
        let asym = (self.covariance - self.covariance.transpose()).amax();
        let scale = self.covariance.amax().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::InvalidState("covariance is not symmetric".into()));
        }
        Ok(())
    }

    /// Draw one sample μ + L·ξ with ξ ~ N(0, I₆) and L the (guarded)
    /// Cholesky factor of the covariance.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vector6<f64>> {
        let l = cholesky_lower(&self.covariance)?;
        let xi = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(self.mean + l * xi)
    }
}
