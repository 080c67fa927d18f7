//! The shared model set every estimator runs against: gravitational
//! constants, drag, process noise, the sensor, and the integrator step.

use crate::dynamics::{DragParams, PhysicalConstants, ProcessNoise, MIN_STEP};
use crate::error::{Error, Result};
use crate::observation::ObservationModel;

/// Everything that defines "the world" for propagation and measurement.
#[derive(Clone, Debug)]
pub struct Environment {
    pub constants: PhysicalConstants,
    pub drag: DragParams,
    pub process_noise: ProcessNoise,
    pub observation: ObservationModel,
    /// Internal RK4 macro-step (s) used whenever a state is advanced.
    pub int_dt: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::default(),
            drag: DragParams::default(),
            process_noise: ProcessNoise::default(),
            observation: ObservationModel::default(),
            int_dt: 1.0,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.drag.validate()?;
        self.observation.validate()?;
        if !(self.int_dt >= MIN_STEP) {
            return Err(Error::Config(format!("int_dt must be at least {MIN_STEP} s")));
        }
        Ok(())
    }
}
