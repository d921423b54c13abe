//! Pinhole projection and the reprojection ("photometric") factor.
//!
//! The camera frame coincides with the body frame, so a landmark is seen at
//! `q = R^T (p_l - p)` and projects to `f q.xy / q.z + c`.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use crate::graph::PoseState;
use crate::manifold::hat;
use crate::{Error, Result};

/// Projections with `|z|` at or below this depth (m) are rejected.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Jacobian of the reprojection residual with respect to
/// `[dR, dv, dp, dp_l]`.
pub type PhotometricJacobian = SMatrix<f64, 2, 12>;

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Focal length `f'` in image units.
    pub focal: f64,
    /// Principal point offset.
    pub principal_point: Vector2<f64>,
}

impl CameraModel {
    /// Camera with principal point at the origin.
    pub fn new(focal: f64) -> Self {
        Self {
            focal,
            principal_point: Vector2::zeros(),
        }
    }

    /// Checks `focal > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::Invalid(alloc::format!(
                "camera focal {} must be > 0",
                self.focal
            )));
        }
        Ok(())
    }
}

/// Detected image coordinates of one landmark in one keyframe.
///
/// Indices are one-based, matching the keyframe and landmark numbering used in
/// reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMeasurement {
    /// Keyframe index in `1..=n`.
    pub frame_index: usize,
    /// Landmark id in `1..=N`.
    pub landmark_id: usize,
    /// Measured `(x', y')`.
    pub uv: Vector2<f64>,
}

/// `R^T (p_l - p)`: the landmark in the body (camera) frame.
pub fn landmark_in_body(pose: &PoseState, landmark: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.matrix().transpose() * (landmark - pose.position)
}

fn check_depth(pt: &Vector3<f64>) -> Result<()> {
    if !(pt.z.abs() > DEPTH_EPSILON) {
        return Err(Error::DegenerateDepth { depth: pt.z });
    }
    Ok(())
}

/// Pinhole projection `(f x / z + cx, f y / z + cy)`.
pub fn project(cam: &CameraModel, pt: &Vector3<f64>) -> Result<Vector2<f64>> {
    check_depth(pt)?;
    Ok(Vector2::new(pt.x / pt.z, pt.y / pt.z) * cam.focal + cam.principal_point)
}

/// Predicted minus measured image coordinates.
pub fn photometric_residual(
    cam: &CameraModel,
    pose: &PoseState,
    landmark: &Vector3<f64>,
    meas: &PixelMeasurement,
) -> Result<Vector2<f64>> {
    Ok(project(cam, &landmark_in_body(pose, landmark))? - meas.uv)
}

/// Differential of the projection at `q`: `f / z^2 [[z, 0, -x], [0, z, -y]]`.
pub fn projection_differential(cam: &CameraModel, q: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    check_depth(q)?;
    let s = cam.focal / (q.z * q.z);
    Ok(Matrix2x3::new(q.z, 0.0, -q.x, 0.0, q.z, -q.y) * s)
}

/// Jacobian of `q = R^T (p_l - p)` with respect to `[dR, dv, dp, dp_l]`.
pub fn body_point_jacobian(pose: &PoseState, landmark: &Vector3<f64>) -> SMatrix<f64, 3, 12> {
    let q = landmark_in_body(pose, landmark);
    let mut jac = SMatrix::<f64, 3, 12>::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&q));
    jac.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(-Matrix3::identity()));
    jac.fixed_view_mut::<3, 3>(0, 9)
        .copy_from(&pose.rotation.matrix().transpose());
    jac
}

/// Analytic Jacobian of [`photometric_residual`]: the projection differential
/// times the body-point Jacobian. The velocity block is identically zero.
pub fn photometric_jacobian(
    cam: &CameraModel,
    pose: &PoseState,
    landmark: &Vector3<f64>,
) -> Result<PhotometricJacobian> {
    let q = landmark_in_body(pose, landmark);
    Ok(projection_differential(cam, &q)? * body_point_jacobian(pose, landmark))
}
