//! IMU preintegration between keyframes and the 9-dimensional IMU factor.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::graph::PoseState;
use crate::manifold::{exp_map, hat, log_map, right_jacobian_inv, Rotation};
use crate::{Error, Result, STANDARD_GRAVITY};

/// Residual of one IMU factor, stacked `[r_R; r_v; r_p]`.
pub type ImuResidual = SVector<f64, 9>;

/// Jacobian of [`ImuResidual`] with respect to
/// `[dR_i, dv_i, dp_i, dR_j, dv_j, dp_j]`.
pub type ImuJacobian = SMatrix<f64, 9, 18>;

/// One gyroscope + accelerometer reading held over `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Angular rate in the body frame, rad/s.
    pub omega: Vector3<f64>,
    /// Specific force in the body frame, m/s².
    pub accel: Vector3<f64>,
    /// Hold time, s.
    pub dt: f64,
}

impl ImuSample {
    /// Builds a sample.
    pub fn new(omega: Vector3<f64>, accel: Vector3<f64>, dt: f64) -> Self {
        Self { omega, accel, dt }
    }

    /// Checks `dt > 0` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(alloc::format!(
                "imu sample dt {} must be > 0",
                self.dt
            )));
        }
        if !self
            .omega
            .iter()
            .chain(self.accel.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::Invalid("imu sample has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Gravity and other world constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    /// Gravity in the world frame, m/s². The default world is z-down.
    pub gravity: Vector3<f64>,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            gravity: Vector3::new(0.0, 0.0, STANDARD_GRAVITY),
        }
    }
}

impl WorldParams {
    /// Rejects gravity magnitudes outside `[9.0, 10.5]` m/s².
    pub fn validate(&self) -> Result<()> {
        let g = self.gravity.norm();
        if !(9.0..=10.5).contains(&g) {
            return Err(Error::Invalid(alloc::format!(
                "gravity magnitude {g} outside [9.0, 10.5]"
            )));
        }
        Ok(())
    }
}

/// Relative motion accumulated from IMU samples between two keyframes.
///
/// Depends only on the samples, never on the pose estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintegratedDelta {
    /// Relative attitude `R_i^T R_j`.
    pub d_rot: Rotation,
    /// Velocity increment in frame `i`, gravity excluded.
    pub d_vel: Vector3<f64>,
    /// Position increment in frame `i`, gravity excluded.
    pub d_pos: Vector3<f64>,
    /// Total integration time, s.
    pub dt_total: f64,
    /// Number of absorbed samples.
    pub sample_count: usize,
}

impl Default for PreintegratedDelta {
    fn default() -> Self {
        Self {
            d_rot: Rotation::identity(),
            d_vel: Vector3::zeros(),
            d_pos: Vector3::zeros(),
            dt_total: 0.0,
            sample_count: 0,
        }
    }
}

impl PreintegratedDelta {
    /// Empty delta.
    pub fn new() -> Self {
        Self::default()
    }

    /// Preintegrates a sequence of samples from scratch.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a ImuSample>) -> Self {
        samples.into_iter().fold(Self::new(), |d, s| d.integrate(s))
    }

    /// Returns this delta extended by one sample.
    ///
    /// Position uses the pre-step velocity and rotation, then velocity uses
    /// the pre-step rotation, then rotation advances.
    #[must_use]
    pub fn integrate(mut self, sample: &ImuSample) -> Self {
        self.absorb(sample);
        self
    }

    /// In-place form of [`integrate`](Self::integrate).
    pub fn absorb(&mut self, sample: &ImuSample) {
        let dt = sample.dt;
        let acc = self.d_rot * sample.accel;
        self.d_pos += self.d_vel * dt + acc * (0.5 * dt * dt);
        self.d_vel += acc * dt;
        self.d_rot = self.d_rot * exp_map(&(sample.omega * dt));
        self.dt_total += dt;
        self.sample_count += 1;
    }
}

struct FactorTerms {
    rot_i_t: Matrix3<f64>,
    /// `R_i^T (v_j - v_i - g dt)`
    vel_term: Vector3<f64>,
    /// `R_i^T (p_j - p_i - v_i dt - g dt^2 / 2)`
    pos_term: Vector3<f64>,
    /// `dR^T R_i^T R_j`
    rot_error: Rotation,
}

fn factor_terms(
    delta: &PreintegratedDelta,
    pose_i: &PoseState,
    pose_j: &PoseState,
    world: &WorldParams,
) -> FactorTerms {
    let dt = delta.dt_total;
    let g = &world.gravity;
    let rot_i_t = pose_i.rotation.matrix().transpose();
    let vel_term = rot_i_t * (pose_j.velocity - pose_i.velocity - g * dt);
    let pos_term =
        rot_i_t * (pose_j.position - pose_i.position - pose_i.velocity * dt - g * (0.5 * dt * dt));
    let rot_error = delta.d_rot.transpose() * pose_i.rotation.transpose() * pose_j.rotation;
    FactorTerms {
        rot_i_t,
        vel_term,
        pos_term,
        rot_error,
    }
}

fn check_duration(delta: &PreintegratedDelta) -> Result<()> {
    if !(delta.dt_total > 0.0) {
        return Err(Error::Invalid(alloc::format!(
            "preintegrated delta has dt_total {} (must be > 0)",
            delta.dt_total
        )));
    }
    Ok(())
}

/// IMU factor residual between consecutive keyframes `i` and `j`.
///
/// ```text
/// r_R = Log(dR^T R_i^T R_j)
/// r_v = R_i^T (v_j - v_i - g dt) - dv
/// r_p = R_i^T (p_j - p_i - v_i dt - g dt^2 / 2) - dp
/// ```
pub fn imu_residual(
    delta: &PreintegratedDelta,
    pose_i: &PoseState,
    pose_j: &PoseState,
    world: &WorldParams,
) -> Result<ImuResidual> {
    check_duration(delta)?;
    let t = factor_terms(delta, pose_i, pose_j, world);
    let r_rot = log_map(&t.rot_error)?;
    let mut r = ImuResidual::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&r_rot);
    r.fixed_rows_mut::<3>(3)
        .copy_from(&(t.vel_term - delta.d_vel));
    r.fixed_rows_mut::<3>(6)
        .copy_from(&(t.pos_term - delta.d_pos));
    Ok(r)
}

/// Analytic Jacobian of [`imu_residual`] under the boxplus retraction
/// `R <- R Exp(dR)`, `v <- v + dv`, `p <- p + R dp`.
pub fn imu_residual_jacobian(
    delta: &PreintegratedDelta,
    pose_i: &PoseState,
    pose_j: &PoseState,
    world: &WorldParams,
) -> Result<ImuJacobian> {
    check_duration(delta)?;
    let dt = delta.dt_total;
    let t = factor_terms(delta, pose_i, pose_j, world);
    let r_rot = log_map(&t.rot_error)?;
    let jr_inv = right_jacobian_inv(&r_rot);
    let rel = t.rot_i_t * pose_j.rotation.matrix();

    let mut jac = ImuJacobian::zeros();
    // rotation rows
    jac.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * rel.transpose()));
    jac.fixed_view_mut::<3, 3>(0, 9).copy_from(&jr_inv);
    // velocity rows
    jac.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&hat(&t.vel_term));
    jac.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-t.rot_i_t));
    jac.fixed_view_mut::<3, 3>(3, 12).copy_from(&t.rot_i_t);
    // position rows
    jac.fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&hat(&t.pos_term));
    jac.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(-t.rot_i_t * dt));
    jac.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(-Matrix3::identity()));
    jac.fixed_view_mut::<3, 3>(6, 15).copy_from(&rel);
    Ok(jac)
}
