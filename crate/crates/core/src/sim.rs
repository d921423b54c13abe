//! Synthetic flights: ground-truth keyframes from the discrete IMU model,
//! exact and noisy IMU samples, and projected landmark detections.
//!
//! Ground truth is integrated with the same per-sample recursion the
//! preintegrator sums, so noise-free datasets make every residual vanish at
//! the true state up to round-off.
//!
//! World frame is z-down: gravity is `(0, 0, +9.81)` and an aircraft 4 m above
//! the pad sits at `z = -4`.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{PoseState, Problem, WindowState};
use crate::imu::{ImuSample, PreintegratedDelta, WorldParams};
use crate::manifold::{exp_map, Rotation};
use crate::vision::{landmark_in_body, project, CameraModel, PixelMeasurement, DEPTH_EPSILON};
use crate::{Error, Result};

/// Body angular rate as a function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularProfile {
    /// Constant rate, rad/s.
    Constant {
        /// Body rate.
        rate: Vector3<f64>,
    },
    /// `bias + amplitude * sin(2 pi f t + phase)` per axis, rad/s.
    Sinusoid {
        /// Constant offset.
        bias: Vector3<f64>,
        /// Per-axis amplitude.
        amplitude: Vector3<f64>,
        /// Frequency, Hz.
        frequency_hz: f64,
        /// Phase, rad.
        phase: f64,
    },
}

impl AngularProfile {
    /// Rate at time `t`.
    pub fn rate(&self, t: f64) -> Vector3<f64> {
        match *self {
            Self::Constant { rate } => rate,
            Self::Sinusoid {
                bias,
                amplitude,
                frequency_hz,
                phase,
            } => bias + amplitude * libm::sin(2.0 * PI * frequency_hz * t + phase),
        }
    }
}

/// Accelerometer (specific force) profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccelProfile {
    /// Constant body-frame specific force, m/s².
    BodyConstant {
        /// Specific force.
        specific_force: Vector3<f64>,
    },
    /// World-frame kinematic acceleration
    /// `mean + amplitude * sin(2 pi f t + phase)`, reported in the body frame
    /// as specific force `R^T (a - g)`.
    WorldSinusoid {
        /// Constant part, m/s².
        mean: Vector3<f64>,
        /// Per-axis amplitude, m/s².
        amplitude: Vector3<f64>,
        /// Frequency, Hz.
        frequency_hz: f64,
        /// Phase, rad.
        phase: f64,
    },
}

impl AccelProfile {
    /// Specific force at time `t` for the given attitude.
    pub fn specific_force(&self, t: f64, rotation: &Rotation, world: &WorldParams) -> Vector3<f64> {
        match *self {
            Self::BodyConstant { specific_force } => specific_force,
            Self::WorldSinusoid {
                mean,
                amplitude,
                frequency_hz,
                phase,
            } => {
                let a = mean + amplitude * libm::sin(2.0 * PI * frequency_hz * t + phase);
                rotation.matrix().transpose() * (a - world.gravity)
            }
        }
    }
}

/// Flight description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    /// Flight time covered by keyframes, s.
    pub duration: f64,
    /// IMU sampling period, s.
    pub imu_dt: f64,
    /// Camera (keyframe) period, s. Integer multiple of `imu_dt`.
    pub camera_dt: f64,
    /// State at `t = 0`, which is also keyframe 1.
    pub initial_pose: PoseState,
    /// Gyroscope profile.
    pub angular: AngularProfile,
    /// Accelerometer profile.
    pub accel: AccelProfile,
}

impl TrajectorySpec {
    /// IMU samples per keyframe interval.
    pub fn samples_per_frame(&self) -> Result<usize> {
        if !(self.imu_dt > 0.0 && self.camera_dt > 0.0) {
            return Err(Error::Invalid("imu_dt and camera_dt must be > 0".into()));
        }
        let ratio = self.camera_dt / self.imu_dt;
        let k = libm::round(ratio);
        if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
            return Err(Error::Invalid(alloc::format!(
                "camera_dt {} is not an integer multiple of imu_dt {}",
                self.camera_dt,
                self.imu_dt
            )));
        }
        Ok(k as usize)
    }

    /// Number of keyframes, `floor(duration / camera_dt) + 1`.
    pub fn keyframe_count(&self) -> Result<usize> {
        self.samples_per_frame()?;
        let intervals = libm::floor(self.duration / self.camera_dt + 1e-9);
        if !(intervals >= 1.0) {
            return Err(Error::Invalid(alloc::format!(
                "duration {} shorter than one camera interval {}",
                self.duration,
                self.camera_dt
            )));
        }
        Ok(intervals as usize + 1)
    }
}

/// Sensor noise and its seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-axis, per-sample variance on gyro and accelerometer readings.
    pub imu_noise_variance: f64,
    /// Per-axis variance on image coordinates.
    pub pixel_noise_variance: f64,
    /// RNG seed.
    pub seed: u64,
}

impl NoiseSpec {
    /// No noise at all.
    pub fn noiseless() -> Self {
        Self {
            imu_noise_variance: 0.0,
            pixel_noise_variance: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.imu_noise_variance >= 0.0 && self.pixel_noise_variance >= 0.0) {
            return Err(Error::Invalid("noise variances must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generated flight with its measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// True keyframe poses and landmark positions.
    pub ground_truth: WindowState,
    /// IMU readings as delivered (noisy if noise was requested), in time order.
    pub imu_samples: Vec<ImuSample>,
    /// IMU samples per keyframe interval.
    pub samples_per_frame: usize,
    /// Landmark detections.
    pub pixel_measurements: Vec<PixelMeasurement>,
    /// Camera used for the detections.
    pub cam: CameraModel,
    /// Gravity used for integration.
    pub world: WorldParams,
    /// `(frame, landmark)` pairs dropped for non-positive depth.
    pub dropped: Vec<(usize, usize)>,
}

impl Dataset {
    /// Preintegrates the IMU samples into one delta per keyframe interval.
    pub fn deltas(&self) -> Result<Vec<PreintegratedDelta>> {
        let expected = (self.ground_truth.pose_count() - 1) * self.samples_per_frame;
        if self.samples_per_frame == 0 || self.imu_samples.len() != expected {
            return Err(Error::Invalid(alloc::format!(
                "{} imu samples, expected {expected}",
                self.imu_samples.len()
            )));
        }
        Ok(self
            .imu_samples
            .chunks(self.samples_per_frame)
            .map(PreintegratedDelta::from_samples)
            .collect())
    }

    /// Problem over this dataset's factors with the given starting window.
    pub fn problem(&self, initial: WindowState) -> Result<Problem> {
        Problem::new(
            initial,
            self.deltas()?,
            self.pixel_measurements.clone(),
            self.cam,
            self.world,
        )
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    Vector3::new(draw(), draw(), draw()) * sigma
}

/// Generates a dataset by forward-integrating the discrete IMU model.
///
/// Per IMU step:
/// `p += v dt + g dt^2 / 2 + R a dt^2 / 2`, `v += g dt + R a dt`,
/// `R = R Exp(w dt)`. Landmarks must lie on `z = 0`.
pub fn generate(
    spec: &TrajectorySpec,
    landmarks: &[Vector3<f64>],
    cam: &CameraModel,
    world: &WorldParams,
    noise: &NoiseSpec,
) -> Result<Dataset> {
    let per_frame = spec.samples_per_frame()?;
    let frames = spec.keyframe_count()?;
    cam.validate()?;
    noise.validate()?;
    if landmarks.is_empty() {
        return Err(Error::Invalid("at least one landmark is required".into()));
    }
    if let Some(l) = landmarks.iter().position(|l| l.z != 0.0) {
        return Err(Error::Invalid(alloc::format!(
            "landmark {} is not on z = 0",
            l + 1
        )));
    }

    let g = world.gravity;
    let dt = spec.imu_dt;
    let mut state = spec.initial_pose;
    let mut poses = Vec::with_capacity(frames);
    let mut exact = Vec::with_capacity((frames - 1) * per_frame);
    poses.push(state);
    for k in 0..(frames - 1) * per_frame {
        let t = k as f64 * dt;
        let sample = ImuSample::new(
            spec.angular.rate(t),
            spec.accel.specific_force(t, &state.rotation, world),
            dt,
        );
        let a = state.rotation * sample.accel;
        state.position += state.velocity * dt + (g + a) * (0.5 * dt * dt);
        state.velocity += (g + a) * dt;
        state.rotation = state.rotation * exp_map(&(sample.omega * dt));
        exact.push(sample);
        if (k + 1) % per_frame == 0 {
            poses.push(state);
        }
    }
    let ground_truth = WindowState::new(poses, landmarks.to_vec())?;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let imu_sigma = libm::sqrt(noise.imu_noise_variance);
    let imu_samples = if imu_sigma > 0.0 {
        exact
            .iter()
            .map(|s| {
                let omega = s.omega + gaussian3(&mut rng, imu_sigma);
                let accel = s.accel + gaussian3(&mut rng, imu_sigma);
                ImuSample::new(omega, accel, s.dt)
            })
            .collect()
    } else {
        exact
    };

    let pix_sigma = libm::sqrt(noise.pixel_noise_variance);
    let mut pixel_measurements = Vec::new();
    let mut dropped = Vec::new();
    for (f, pose) in ground_truth.poses.iter().enumerate() {
        for (l, lm) in landmarks.iter().enumerate() {
            let q = landmark_in_body(pose, lm);
            if !(q.z > DEPTH_EPSILON) {
                dropped.push((f + 1, l + 1));
                continue;
            }
            let mut uv = project(cam, &q)?;
            if pix_sigma > 0.0 {
                let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                uv += Vector2::new(draw(), draw()) * pix_sigma;
            }
            pixel_measurements.push(PixelMeasurement {
                frame_index: f + 1,
                landmark_id: l + 1,
                uv,
            });
        }
    }

    Ok(Dataset {
        ground_truth,
        imu_samples,
        samples_per_frame: per_frame,
        pixel_measurements,
        cam: *cam,
        world: *world,
        dropped,
    })
}

/// Named starting points for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPreset {
    /// Every pose at rest at `(0, 0, -4)` with identity attitude; landmarks
    /// where their first detection's ray meets `z = 0`.
    Hover,
    /// The ground truth itself.
    Truth,
}

impl InitPreset {
    /// Parses `"hover"` or `"truth"`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hover" => Ok(Self::Hover),
            "truth" => Ok(Self::Truth),
            other => Err(Error::UnknownPreset(String::from(other))),
        }
    }

    /// Preset name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Hover => "hover",
            Self::Truth => "truth",
        }
    }
}

/// Position used by the `hover` preset for every keyframe.
pub const HOVER_INITIAL_POSITION: [f64; 3] = [0.0, 0.0, -4.0];

/// Intersects the viewing ray of `uv` from `pose` with the plane `z = 0`.
pub fn ground_intersection(
    cam: &CameraModel,
    pose: &PoseState,
    uv: &Vector2<f64>,
) -> Result<Vector3<f64>> {
    let xy = (uv - cam.principal_point) / cam.focal;
    let dir = pose.rotation.matrix() * Vector3::new(xy.x, xy.y, 1.0);
    let t = -pose.position.z / dir.z;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Invalid(
            "viewing ray does not reach the ground plane".into(),
        ));
    }
    let mut p = pose.position + dir * t;
    p.z = 0.0;
    Ok(p)
}

/// Builds the optimizer's starting window from a dataset.
pub fn perturb_initialization(dataset: &Dataset, preset: InitPreset) -> Result<WindowState> {
    let truth = &dataset.ground_truth;
    match preset {
        InitPreset::Truth => Ok(truth.clone()),
        InitPreset::Hover => {
            let pose = PoseState::new(
                Rotation::identity(),
                Vector3::zeros(),
                Vector3::from(HOVER_INITIAL_POSITION),
            );
            let poses = alloc::vec![pose; truth.pose_count()];
            let landmarks = (1..=truth.landmark_count())
                .map(|id| {
                    let m = dataset
                        .pixel_measurements
                        .iter()
                        .filter(|m| m.landmark_id == id)
                        .min_by_key(|m| m.frame_index)
                        .ok_or_else(|| {
                            Error::Invalid(alloc::format!("landmark {id} is never observed"))
                        })?;
                    ground_intersection(&dataset.cam, &poses[m.frame_index - 1], &m.uv)
                })
                .collect::<Result<Vec<_>>>()?;
            WindowState::new(poses, landmarks)
        }
    }
}

/// Complete simulated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Flight.
    pub trajectory: TrajectorySpec,
    /// Landmark positions on the pad.
    pub landmarks: Vec<Vector3<f64>>,
    /// Camera.
    pub cam: CameraModel,
    /// Gravity.
    pub world: WorldParams,
    /// Noise.
    pub noise: NoiseSpec,
}

impl Scenario {
    /// Desk-scale landing approach: 7 keyframes 0.4 s apart with 20 IMU
    /// samples each, three landmarks in a 1 m triangle around the origin,
    /// IMU noise variance `1e-4`, starting at rest 4 m above the pad.
    ///
    /// The camera uses normalized image coordinates (`f' = 1`); the image noise
    /// variance `6.25e-6` is about one pixel at a 400 px focal length.
    pub fn reference(seed: u64) -> Self {
        let r = 1.0 / libm::sqrt(3.0);
        Self {
            trajectory: TrajectorySpec {
                duration: 2.4,
                imu_dt: 0.02,
                camera_dt: 0.4,
                initial_pose: PoseState::new(
                    Rotation::identity(),
                    Vector3::zeros(),
                    Vector3::from(HOVER_INITIAL_POSITION),
                ),
                angular: AngularProfile::Sinusoid {
                    bias: Vector3::zeros(),
                    amplitude: Vector3::new(0.15, 0.1, 0.2),
                    frequency_hz: 0.5,
                    phase: 0.0,
                },
                accel: AccelProfile::WorldSinusoid {
                    mean: Vector3::zeros(),
                    amplitude: Vector3::new(0.6, 0.4, 0.25),
                    frequency_hz: 1.0 / 2.4,
                    phase: 0.0,
                },
            },
            landmarks: alloc::vec![
                Vector3::new(r, 0.0, 0.0),
                Vector3::new(-0.5 * r, 0.5, 0.0),
                Vector3::new(-0.5 * r, -0.5, 0.0),
            ],
            cam: CameraModel::new(1.0),
            world: WorldParams::default(),
            noise: NoiseSpec {
                imu_noise_variance: 1e-4,
                pixel_noise_variance: 6.25e-6,
                seed,
            },
        }
    }

    /// Generates this scenario's dataset.
    pub fn generate(&self) -> Result<Dataset> {
        generate(
            &self.trajectory,
            &self.landmarks,
            &self.cam,
            &self.world,
            &self.noise,
        )
    }
}
