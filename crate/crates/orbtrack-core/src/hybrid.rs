//! The switching tracker: an unscented Kalman filter while the estimate sits
//! inside the sensor's field of view, a particle ensemble while it does not.
//!
//! One step advances the belief from the current epoch to the next:
//!
//! * Gaussian mode first checks the field-of-view gate at the *current*
//!   epoch using the current mean. Inside the gate the UKF predicts (and
//!   updates when a measurement arrived); outside, the Gaussian is exploded
//!   into an equally weighted particle cloud before propagation.
//! * Ensemble mode propagates every particle through the noisy dynamics.
//!   When a measurement arrives the cloud is reweighted against it, its
//!   weighted moments are frozen as the new Gaussian belief, and the cloud
//!   is resampled before being retired.
//!
//! Both transitions can occur within a single step (the gate fails but the
//! sensor still produces a measurement at the next epoch).

use nalgebra::Vector2;
use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::particle::ParticleEnsemble;
use crate::state::GaussianBelief;
use crate::ukf::{UnscentedKalmanFilter, UtParams};

/// Which belief representation is live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackerMode {
    Gaussian,
    Ensemble,
}

impl TrackerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackerMode::Gaussian => "gaussian",
            TrackerMode::Ensemble => "ensemble",
        }
    }
}

/// Representation hand-offs that a step can perform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeTransition {
    /// Gaussian belief exploded into a particle cloud (gate failed).
    GaussianToEnsemble,
    /// Particle cloud collapsed back to a Gaussian (measurement arrived).
    EnsembleToGaussian,
}

/// Run the full switching logic, or pin the tracker to the UKF branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackerKind {
    Hybrid,
    UkfOnly,
}

enum Representation {
    Gaussian(GaussianBelief),
    Ensemble(ParticleEnsemble),
}

/// Everything a step reports back for logging.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: f64,
    /// Mode in effect after the step completed.
    pub mode: TrackerMode,
    pub estimate: GaussianBelief,
    pub transitions: Vec<ModeTransition>,
    pub measured: bool,
}

pub struct HybridTracker {
    kind: TrackerKind,
    ukf: UnscentedKalmanFilter,
    particle_count: usize,
    representation: Representation,
    t: f64,
}

impl HybridTracker {
    pub const DEFAULT_PARTICLE_COUNT: usize = 2000;

    pub fn new(
        kind: TrackerKind,
        ut: UtParams,
        particle_count: usize,
        initial: GaussianBelief,
        t0: f64,
    ) -> Result<Self> {
        initial.validate()?;
        if particle_count < 2 {
            return Err(Error::Config("particle count must be at least 2".into()));
        }
        Ok(Self {
            kind,
            ukf: UnscentedKalmanFilter::new(ut)?,
            particle_count,
            representation: Representation::Gaussian(initial),
            t: t0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mode(&self) -> TrackerMode {
        match self.representation {
            Representation::Gaussian(_) => TrackerMode::Gaussian,
            Representation::Ensemble(_) => TrackerMode::Ensemble,
        }
    }

    /// Current belief as a Gaussian (ensemble moments in ensemble mode).
    pub fn estimate(&self) -> Result<GaussianBelief> {
        match &self.representation {
            Representation::Gaussian(b) => Ok(*b),
            Representation::Ensemble(e) => e.moments(),
        }
    }

    /// Advance to `t_next`, folding in the measurement `z` if one arrived
    /// at that epoch. Returns the post-step snapshot.
    pub fn step(
        &mut self,
        t_next: f64,
        z: Option<&Vector2<f64>>,
        env: &Environment,
        rng: &mut impl Rng,
    ) -> Result<StepRecord> {
        if !(t_next > self.t) {
            return Err(Error::Domain(format!(
                "step target {t_next} does not advance past {}",
                self.t
            )));
        }
        let t0 = self.t;
        let mut transitions = Vec::new();

        // Gaussian mode: decide the branch from the gate at the current
        // epoch before anything moves. The UKF-only tracker never leaves
        // the Gaussian branch.
        if let Representation::Gaussian(belief) = &self.representation {
            let stay_gaussian = match self.kind {
                TrackerKind::UkfOnly => true,
                TrackerKind::Hybrid => env
                    .observation
                    .in_fov(&belief.mean_state(), t0)
                    .map_err(|e| e.with_epoch(t0))?,
            };
            if stay_gaussian {
                let mut next = self
                    .ukf
                    .predict(belief, t0, t_next, env)
                    .map_err(|e| e.with_epoch(t_next))?;
                if let Some(z) = z {
                    next = self
                        .ukf
                        .update(&next, z, t_next, env)
                        .map_err(|e| e.with_epoch(t_next))?;
                }
                self.representation = Representation::Gaussian(next);
            } else {
                let ensemble = ParticleEnsemble::from_belief(belief, self.particle_count, rng)
                    .map_err(|e| e.with_epoch(t0))?;
                transitions.push(ModeTransition::GaussianToEnsemble);
                self.representation = Representation::Ensemble(ensemble);
            }
        }

        // Ensemble mode (possibly just entered; the cloud sits at t0 either
        // way): propagate, then collapse back to a Gaussian if the sensor
        // produced anything.
        if let Representation::Ensemble(ensemble) = &mut self.representation {
            ensemble
                .propagate(t0, t_next, env, rng)
                .map_err(|e| e.with_epoch(t_next))?;
            if let Some(z) = z {
                ensemble.reweight(z, t_next, env).map_err(|e| e.with_epoch(t_next))?;
                let collapsed = ensemble.moments().map_err(|e| e.with_epoch(t_next))?;
                ensemble
                    .resample_systematic(rng)
                    .map_err(|e| e.with_epoch(t_next))?;
                transitions.push(ModeTransition::EnsembleToGaussian);
                self.representation = Representation::Gaussian(collapsed);
            }
        }

        self.t = t_next;
        let estimate = self.estimate().map_err(|e| e.with_epoch(t_next))?;
        Ok(StepRecord {
            t: t_next,
            mode: self.mode(),
            estimate,
            transitions,
            measured: z.is_some(),
        })
    }
}

// ---------------------------------------------------------------------------
