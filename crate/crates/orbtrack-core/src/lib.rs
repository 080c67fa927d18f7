//! Orbit-tracking estimation library: perturbed two-body dynamics, angular
//! observations from a rotating ground station, an unscented Kalman filter,
//! a particle filter, and the hybrid tracker that switches between them,
//! plus Gaussian-mixture uncertainty propagation, a particle-depletion
//! probability bound, and estimator-consistency diagnostics.

pub mod error;
pub mod linalg;
pub mod state;
pub mod consistency;
pub mod depletion;
pub mod dynamics;
pub mod observation;
pub mod env;
pub mod ukf;
pub mod particle;
pub mod hybrid;
pub mod gmm;
pub mod scenario;
pub mod runner;

pub use env::Environment;
pub use error::{Error, Result};
pub use state::{GaussianBelief, StateVector};
