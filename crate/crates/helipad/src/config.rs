//! Experiment configuration file (TOML).
//!
//! Every key is optional; an empty file is the desk-scale landing experiment:
//! 7 keyframes, 20 IMU samples at 0.02 s per 0.4 s camera interval, IMU noise
//! variance 1e-4, damping 0.1, 50 iterations, identity/zero/(0, 0, -4)
//! initialization.

use std::path::{Path, PathBuf};

use helipad_core::graph::{min_landmarks, DEFAULT_PHOTOMETRIC_WEIGHT};
use helipad_core::manifold::exp_map;
use helipad_core::sim::{
    AccelProfile, AngularProfile, InitPreset, NoiseSpec, Scenario, TrajectorySpec,
};
use helipad_core::{CameraModel, PoseState, SolverConfig, WorldParams};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Configuration problems, always naming the offending key.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// File could not be read.
    #[error("cannot read config {path}: {source}")]
    Read {
        /// Config path.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
    /// TOML syntax or schema error.
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    /// A value is out of range.
    #[error("invalid config field `{field}`: {message}")]
    Field {
        /// Dotted key.
        field: &'static str,
        /// What is wrong.
        message: String,
    },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Keyframes in the window, `n`.
    pub window_length: usize,
    /// Where `simulate` and `estimate` write their files.
    pub output_dir: PathBuf,
    pub imu: ImuSection,
    pub camera: CameraSection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub initialization: InitSection,
    pub world: WorldSection,
    pub landmarks: LandmarkSection,
    pub trajectory: TrajectorySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSection {
    /// IMU sampling time, s.
    pub sampling_time: f64,
    /// Camera sampling time, s; an integer multiple of `sampling_time`.
    pub camera_sampling_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub focal: f64,
    pub principal_point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-axis per-sample variance on gyro and accelerometer.
    pub imu_variance: f64,
    /// Per-axis variance on image coordinates.
    pub pixel_variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub damping: f64,
    pub iterations: usize,
    pub constrain_altitude: bool,
    pub convergence_tol: f64,
    pub photometric_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    /// `hover` or `truth`.
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub gravity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkSection {
    /// Pad landmark positions; z must be 0.
    pub positions: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
    /// Initial attitude as a rotation vector, rad.
    pub initial_attitude: [f64; 3],
    pub angular: AngularSection,
    pub accel: AccelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngularSection {
    Constant {
        rate: [f64; 3],
    },
    Sinusoid {
        bias: [f64; 3],
        amplitude: [f64; 3],
        frequency_hz: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccelSection {
    BodyConstant {
        specific_force: [f64; 3],
    },
    WorldSinusoid {
        mean: [f64; 3],
        amplitude: [f64; 3],
        frequency_hz: f64,
        phase: f64,
    },
}

fn defaults() -> Scenario {
    Scenario::reference(0)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            window_length: 7,
            output_dir: PathBuf::from("out"),
            imu: ImuSection::default(),
            camera: CameraSection::default(),
            noise: NoiseSection::default(),
            solver: SolverSection::default(),
            initialization: InitSection::default(),
            world: WorldSection::default(),
            landmarks: LandmarkSection::default(),
            trajectory: TrajectorySection::default(),
        }
    }
}

impl Default for ImuSection {
    fn default() -> Self {
        let t = defaults().trajectory;
        Self {
            sampling_time: t.imu_dt,
            camera_sampling_time: t.camera_dt,
        }
    }
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = defaults().cam;
        Self {
            focal: c.focal,
            principal_point: c.principal_point.into(),
        }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = defaults().noise;
        Self {
            imu_variance: n.imu_noise_variance,
            pixel_variance: n.pixel_noise_variance,
            seed: n.seed,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            damping: s.damping,
            iterations: s.max_iterations,
            constrain_altitude: s.constrain_altitude,
            convergence_tol: s.convergence_tol,
            photometric_weight: DEFAULT_PHOTOMETRIC_WEIGHT,
        }
    }
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            preset: InitPreset::Hover.name().to_owned(),
        }
    }
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            gravity: WorldParams::default().gravity.into(),
        }
    }
}

impl Default for LandmarkSection {
    fn default() -> Self {
        Self {
            positions: defaults().landmarks.iter().map(|l| (*l).into()).collect(),
        }
    }
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = defaults().trajectory;
        Self {
            initial_position: t.initial_pose.position.into(),
            initial_velocity: t.initial_pose.velocity.into(),
            initial_attitude: [0.0; 3],
            angular: t.angular.into(),
            accel: t.accel.into(),
        }
    }
}

impl From<AngularProfile> for AngularSection {
    fn from(p: AngularProfile) -> Self {
        match p {
            AngularProfile::Constant { rate } => Self::Constant { rate: rate.into() },
            AngularProfile::Sinusoid {
                bias,
                amplitude,
                frequency_hz,
                phase,
            } => Self::Sinusoid {
                bias: bias.into(),
                amplitude: amplitude.into(),
                frequency_hz,
                phase,
            },
        }
    }
}

impl From<&AngularSection> for AngularProfile {
    fn from(p: &AngularSection) -> Self {
        match *p {
            AngularSection::Constant { rate } => Self::Constant { rate: rate.into() },
            AngularSection::Sinusoid {
                bias,
                amplitude,
                frequency_hz,
                phase,
            } => Self::Sinusoid {
                bias: bias.into(),
                amplitude: amplitude.into(),
                frequency_hz,
                phase,
            },
        }
    }
}

impl From<AccelProfile> for AccelSection {
    fn from(p: AccelProfile) -> Self {
        match p {
            AccelProfile::BodyConstant { specific_force } => Self::BodyConstant {
                specific_force: specific_force.into(),
            },
            AccelProfile::WorldSinusoid {
                mean,
                amplitude,
                frequency_hz,
                phase,
            } => Self::WorldSinusoid {
                mean: mean.into(),
                amplitude: amplitude.into(),
                frequency_hz,
                phase,
            },
        }
    }
}

impl From<&AccelSection> for AccelProfile {
    fn from(p: &AccelSection) -> Self {
        match *p {
            AccelSection::BodyConstant { specific_force } => Self::BodyConstant {
                specific_force: specific_force.into(),
            },
            AccelSection::WorldSinusoid {
                mean,
                amplitude,
                frequency_hz,
                phase,
            } => Self::WorldSinusoid {
                mean: mean.into(),
                amplitude: amplitude.into(),
                frequency_hz,
                phase,
            },
        }
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl ExperimentConfig {
    /// Parses TOML text and validates it.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Range checks on every field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window_length < 2 {
            return Err(field("window_length", "must be >= 2"));
        }
        if !(self.imu.sampling_time > 0.0) {
            return Err(field("imu.sampling_time", "must be > 0"));
        }
        if !(self.imu.camera_sampling_time > 0.0) {
            return Err(field("imu.camera_sampling_time", "must be > 0"));
        }
        self.trajectory_spec()
            .samples_per_frame()
            .map_err(|e| field("imu.camera_sampling_time", e.to_string()))?;
        if !(self.camera.focal > 0.0) || !all_finite(&self.camera.principal_point) {
            return Err(field(
                "camera.focal",
                "must be > 0 with a finite principal point",
            ));
        }
        if !(self.noise.imu_variance >= 0.0) {
            return Err(field("noise.imu_variance", "must be >= 0"));
        }
        if !(self.noise.pixel_variance >= 0.0) {
            return Err(field("noise.pixel_variance", "must be >= 0"));
        }
        if !(self.solver.damping >= 0.0 && self.solver.damping.is_finite()) {
            return Err(field("solver.damping", "must be >= 0"));
        }
        if self.solver.iterations == 0 {
            return Err(field("solver.iterations", "must be >= 1"));
        }
        if !(self.solver.convergence_tol >= 0.0) {
            return Err(field("solver.convergence_tol", "must be >= 0"));
        }
        if !(self.solver.photometric_weight >= 0.0) {
            return Err(field("solver.photometric_weight", "must be >= 0"));
        }
        InitPreset::parse(&self.initialization.preset)
            .map_err(|e| field("initialization.preset", e.to_string()))?;
        self.world_params()
            .validate()
            .map_err(|e| field("world.gravity", e.to_string()))?;
        if self.landmarks.positions.is_empty() {
            return Err(field("landmarks.positions", "need at least one landmark"));
        }
        if self
            .landmarks
            .positions
            .iter()
            .any(|p| !all_finite(p) || p[2] != 0.0)
        {
            return Err(field(
                "landmarks.positions",
                "landmarks must be finite and lie on z = 0",
            ));
        }
        let t = &self.trajectory;
        if !all_finite(&t.initial_position)
            || !all_finite(&t.initial_velocity)
            || !all_finite(&t.initial_attitude)
        {
            return Err(field("trajectory", "initial state must be finite"));
        }
        Ok(())
    }

    /// Landmark count below the row-count condition for this window length,
    /// if any. Only a necessary condition, so callers should just warn.
    pub fn landmark_shortfall(&self) -> Option<(usize, usize)> {
        let have = self.landmarks.positions.len();
        let need = min_landmarks(self.window_length).ok()?;
        (have < need).then_some((have, need))
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            gravity: self.world.gravity.into(),
        }
    }

    pub fn camera_model(&self) -> CameraModel {
        CameraModel {
            focal: self.camera.focal,
            principal_point: Vector2::from(self.camera.principal_point),
        }
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec {
        let t = &self.trajectory;
        TrajectorySpec {
            duration: self.imu.camera_sampling_time * (self.window_length.max(2) - 1) as f64,
            imu_dt: self.imu.sampling_time,
            camera_dt: self.imu.camera_sampling_time,
            initial_pose: PoseState::new(
                exp_map(&Vector3::from(t.initial_attitude)),
                Vector3::from(t.initial_velocity),
                Vector3::from(t.initial_position),
            ),
            angular: (&t.angular).into(),
            accel: (&t.accel).into(),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            trajectory: self.trajectory_spec(),
            landmarks: self
                .landmarks
                .positions
                .iter()
                .map(|p| Vector3::from(*p))
                .collect(),
            cam: self.camera_model(),
            world: self.world_params(),
            noise: NoiseSpec {
                imu_noise_variance: self.noise.imu_variance,
                pixel_noise_variance: self.noise.pixel_variance,
                seed: self.noise.seed,
            },
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            damping: self.solver.damping,
            max_iterations: self.solver.iterations,
            constrain_altitude: self.solver.constrain_altitude,
            convergence_tol: self.solver.convergence_tol,
        }
    }

    pub fn init_preset(&self) -> InitPreset {
        InitPreset::parse(&self.initialization.preset).unwrap_or(InitPreset::Hover)
    }
}
