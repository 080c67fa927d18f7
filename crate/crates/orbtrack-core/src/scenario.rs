//! Scenario configuration: the JSON schema, built-in presets, seed
//! derivation, and assembly of the runtime [`Environment`] and initial
//! belief from a validated config.
//!
//! All angles in the JSON schema use human units (arcseconds for sensor
//! noise, degrees for the field of view); the runtime model works in
//! radians. Seeds are derived from the master seed with a SplitMix64-style
//! mix so every run index gets an independent generator regardless of
//! execution order; within a run, fixed ChaCha streams separate the truth
//! process noise, the sensor, the tracker, and the initial truth draw.

use std::path::Path;

use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DragParams, PhysicalConstants, ProcessNoise};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::observation::{ObservationModel, ARCSEC};
use crate::state::GaussianBelief;
use crate::ukf::UtParams;

/// Decision-epoch spacing (s) shared by all presets.
pub const DEFAULT_EPOCH_DT: f64 = 10.0;

/// Independent generator channels within one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngChannel {
    /// Truth-trajectory process noise.
    TruthProcess = 0,
    /// Detection draws and measurement noise.
    Sensor = 1,
    /// Tracker-internal sampling (ensemble draws, resampling).
    Tracker = 2,
    /// The initial truth state draw.
    TruthInit = 3,
}

/// SplitMix64 mix of the master seed and a run index; adjacent indices give
/// statistically independent seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, stream-separated generator for one run and channel.
pub fn run_rng(master: u64, run_index: u64, channel: RngChannel) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(master, run_index));
    rng.set_stream(channel as u64);
    rng
}

/// Which estimator a batch exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerChoice {
    Hybrid,
    Ukf,
}

/// Unscented-transform settings in the JSON schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtConfig {
    fn default() -> Self {
        let p = UtParams::default();
        Self { alpha: p.alpha, beta: p.beta, kappa: p.kappa }
    }
}

/// Ground-station settings in the JSON schema (human units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationConfig {
    /// Station location in the Earth-fixed frame (km).
    pub ecef: [f64; 3],
    /// Angle-noise standard deviation (arcseconds).
    pub noise_arcsec: f64,
    pub prob_detection: f64,
    /// Field-of-view half-width in azimuth (degrees).
    pub fov_azimuth_deg: f64,
    /// Field-of-view half-width in elevation (degrees).
    pub fov_elevation_deg: f64,
    /// Earth rotation rate (rad/s).
    pub omega_earth: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        let m = ObservationModel::default();
        Self {
            ecef: [m.station_ecef.x, m.station_ecef.y, m.station_ecef.z],
            // Stated directly in arcseconds; dividing m.noise_std back out
            // would leave a one-ulp artifact in saved files.
            noise_arcsec: 3.9,
            prob_detection: m.prob_detection,
            fov_azimuth_deg: 75.0,
            fov_elevation_deg: 90.0,
            omega_earth: m.omega_earth,
        }
    }
}

/// Drag settings in the JSON schema; `area_to_mass = 0` disables drag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DragConfig {
    pub cd: f64,
    /// Area-to-mass ratio (m²/kg).
    pub area_to_mass: f64,
    /// Reference density (kg/m³).
    pub rho0: f64,
    /// Reference radius (km).
    pub r0: f64,
    /// Scale height (km).
    pub scale_height: f64,
}

impl Default for DragConfig {
    fn default() -> Self {
        let d = DragParams::default();
        Self {
            cd: d.cd,
            area_to_mass: d.area_to_mass,
            rho0: d.rho0,
            r0: d.r0,
            scale_height: d.scale_height,
        }
    }
}

/// Full scenario definition. Every field has a default (the case-1 values),
/// so a JSON file only needs the fields it overrides; unknown fields are
/// rejected by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Prior mean state [x, y, z (km), vx, vy, vz (km/s)].
    pub initial_mean: [f64; 6],
    /// Per-axis prior standard deviations (km, km/s).
    pub initial_sigmas: [f64; 6],
    /// Simulation horizon (s).
    pub duration: f64,
    /// Decision/measurement epoch spacing (s).
    pub epoch_dt: f64,
    /// RK4 macro-step (s).
    pub integrator_dt: f64,
    pub particle_count: usize,
    pub ut_params: UtConfig,
    pub station: StationConfig,
    pub drag: DragConfig,
    /// Disable the oblateness term (pure point-mass gravity).
    pub two_body: bool,
    /// Multiplier on the baseline process-noise intensity.
    pub process_noise_scale: f64,
    pub master_seed: u64,
    /// Monte Carlo tracker runs in a batch.
    pub runs: usize,
    pub tracker: TrackerChoice,
    /// Truth draws used for the PCRB expectation.
    pub pcrb_runs: usize,
    /// Ensemble size for the uncertainty-propagation study.
    pub study_samples: usize,
    /// Snapshot times (s) for the uncertainty-propagation study.
    pub study_times: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        case1()
    }
}

/// Test case 1: 45°-inclined low Earth orbit, 5 km / 1 m/s prior.
pub fn case1() -> ScenarioConfig {
    let angle = std::f64::consts::FRAC_PI_4;
    ScenarioConfig {
        name: "case1".into(),
        initial_mean: [
            7800.0,
            0.0,
            0.0,
            0.0,
            6.8443 * angle.cos(),
            6.8443 * angle.sin(),
        ],
        initial_sigmas: [5.0, 5.0, 5.0, 1e-3, 1e-3, 1e-3],
        duration: 18000.0,
        epoch_dt: DEFAULT_EPOCH_DT,
        integrator_dt: 1.0,
        particle_count: 2000,
        ut_params: UtConfig::default(),
        station: StationConfig::default(),
        drag: DragConfig::default(),
        two_body: false,
        process_noise_scale: 1.0,
        master_seed: 7,
        runs: 25,
        tracker: TrackerChoice::Hybrid,
        pcrb_runs: 50,
        study_samples: 5000,
        study_times: vec![0.0, 1500.0, 3000.0, 4500.0, 6000.0],
    }
}

/// Test case 2: low-inclination orbit (π/30), 2 km / 200 m/s prior.
pub fn case2() -> ScenarioConfig {
    let angle = std::f64::consts::PI / 30.0;
    ScenarioConfig {
        name: "case2".into(),
        initial_mean: [
            6800.0,
            0.0,
            0.0,
            0.0,
            7.5989 * angle.cos(),
            7.5989 * angle.sin(),
        ],
        initial_sigmas: [2.0, 2.0, 2.0, 0.2, 0.2, 0.2],
        ..case1()
    }
    .named("case2")
}

/// High-velocity-noise propagation study: σ_pos = 1 km, σ_v = 1 km/s on the
/// π/12-inclined study orbit, Keplerian (two-body, drag-free) dynamics.
pub fn prop_high() -> ScenarioConfig {
    let inc = std::f64::consts::PI / 12.0;
    ScenarioConfig {
        name: "prop-high".into(),
        initial_mean: [6600.0 * inc.cos(), 0.0, 6600.0 * inc.sin(), 0.0, 7.8848, 0.0],
        initial_sigmas: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        duration: 6000.0,
        integrator_dt: 10.0,
        two_body: true,
        drag: DragConfig { area_to_mass: 0.0, ..DragConfig::default() },
        ..case1()
    }
    .named("prop-high")
}

/// Low-velocity-noise propagation study: σ_v reduced to 10 m/s.
pub fn prop_low() -> ScenarioConfig {
    ScenarioConfig {
        initial_sigmas: [1.0, 1.0, 1.0, 0.01, 0.01, 0.01],
        ..prop_high()
    }
    .named("prop-low")
}

impl ScenarioConfig {
    fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    /// Built-in preset by name, if one exists.
    pub fn preset(name: &str) -> Option<ScenarioConfig> {
        match name {
            "case1" => Some(case1()),
            "case2" => Some(case2()),
            "prop-high" => Some(prop_high()),
            "prop-low" => Some(prop_low()),
            _ => None,
        }
    }

    /// Names of all built-in presets.
    pub fn preset_names() -> &'static [&'static str] {
        &["case1", "case2", "prop-high", "prop-low"]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.epoch_dt > 0.0) || self.epoch_dt < self.integrator_dt {
            return Err(Error::Config(format!(
                "epoch_dt ({}) must be positive and at least integrator_dt ({})",
                self.epoch_dt, self.integrator_dt
            )));
        }
        if self.duration < self.epoch_dt {
            return Err(Error::Config("duration must cover at least one epoch".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.pcrb_runs == 0 {
            return Err(Error::Config("pcrb_runs must be at least 1".into()));
        }
        if self.particle_count < 2 {
            return Err(Error::Config("particle_count must be at least 2".into()));
        }
        if self.initial_sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "initial_sigmas must all be positive (the prior must be invertible)".into(),
            ));
        }
        if !(self.process_noise_scale >= 0.0) {
            return Err(Error::Config("process_noise_scale must be non-negative".into()));
        }
        if self.study_samples == 0 {
            return Err(Error::Config("study_samples must be positive".into()));
        }
        // Assembling the environment exercises the component validators
        // (station geometry, drag parameters, UT weights).
        self.environment()?;
        self.initial_belief().validate()?;
        Ok(())
    }

    /// Runtime world model assembled from the config.
    pub fn environment(&self) -> Result<Environment> {
        let constants = if self.two_body {
            PhysicalConstants::default().two_body()
        } else {
            PhysicalConstants::default()
        };
        let drag = DragParams {
            cd: self.drag.cd,
            area_to_mass: self.drag.area_to_mass,
            rho0: self.drag.rho0,
            r0: self.drag.r0,
            scale_height: self.drag.scale_height,
        };
        let process_noise = ProcessNoise::baseline(self.process_noise_scale)?;
        let observation = ObservationModel {
            station_ecef: self.station.ecef.into(),
            noise_std: self.station.noise_arcsec * ARCSEC,
            prob_detection: self.station.prob_detection,
            fov_azimuth: self.station.fov_azimuth_deg.to_radians(),
            fov_elevation: self.station.fov_elevation_deg.to_radians(),
            omega_earth: self.station.omega_earth,
        };
        let env = Environment {
            constants,
            drag,
            process_noise,
            observation,
            int_dt: self.integrator_dt,
        };
        env.validate()?;
        Ok(env)
    }

    /// UT parameters from the config.
    pub fn ut(&self) -> UtParams {
        UtParams {
            alpha: self.ut_params.alpha,
            beta: self.ut_params.beta,
            kappa: self.ut_params.kappa,
        }
    }

    /// Prior belief from the config.
    pub fn initial_belief(&self) -> GaussianBelief {
        GaussianBelief::from_std_devs(Vector6::from_row_slice(&self.initial_mean), self.initial_sigmas)
    }

    /// Decision epochs 0, epoch_dt, …, up to (and including, when divisible)
    /// the duration.
    pub fn epoch_grid(&self) -> Vec<f64> {
        let steps = (self.duration / self.epoch_dt + 1e-9).floor() as usize;
        (0..=steps).map(|k| k as f64 * self.epoch_dt).collect()
    }
}

/// Load a scenario from a JSON file; parse errors carry line/column context.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Serialize a scenario as pretty-printed JSON.
pub fn save_scenario(config: &ScenarioConfig, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}

/// Resolve a CLI scenario argument: a preset name, or a path to a JSON file.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioConfig> {
    if let Some(preset) = ScenarioConfig::preset(arg) {
        return Ok(preset);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "'{arg}' is neither a preset ({}) nor an existing file",
            ScenarioConfig::preset_names().join(", ")
        )));
    }
    load_scenario(path)
}

// ---------------------------------------------------------------------------
