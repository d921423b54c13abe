//! SO(3) primitives: hat/vee, the exponential and logarithm maps, and a
//! validated rotation-matrix newtype.
//!
//! Rotations are kept in matrix form throughout so the residual Jacobians can
//! be written directly against the matrices they differentiate.

use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Rotation vector (axis times angle, radians).
pub type TangentVector = Vector3<f64>;

/// Orthonormality tolerance on `M^T M - I` and `det M - 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// `log_map` refuses angles this close to a half turn.
pub const LOG_PI_MARGIN: f64 = 1e-6;

/// Below this angle the Rodrigues coefficients switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Body-to-world direction-cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// The identity rotation.
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking that it is a proper rotation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let defect = orthonormality_defect(&m);
        let det = m.determinant();
        if !(defect < ROTATION_TOLERANCE) || !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(Error::NotARotation { defect, det });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without validation. The caller guarantees `m` is in SO(3).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// The underlying matrix.
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Inverse rotation.
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in `[0, pi]`, `atan2(|vee(R - R^T)| / 2, (tr R - 1) / 2)`.
    ///
    /// Agrees with the trace angle but keeps full relative precision near 0.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let s = vee_unchecked(&(m - m.transpose())).norm() / 2.0;
        libm::atan2(s, (m.trace() - 1.0) / 2.0)
    }

    /// Max-abs entry of `R^T R - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.0)
    }

    /// Angle of `self^T * other`, the geodesic distance between the two.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;

    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

fn orthonormality_defect(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

fn trace_angle(m: &Matrix3<f64>) -> f64 {
    let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    libm::acos(c)
}

/// Skew-symmetric matrix `S` with `S w = v x w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices with `|S + S^T| >= 1e-9`.
pub fn vee(s: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asymmetry = (s + s.transpose()).norm();
    if !(asymmetry < 1e-9) {
        return Err(Error::NotSkewSymmetric { asymmetry });
    }
    Ok(vee_unchecked(s))
}

fn vee_unchecked(s: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

/// Rodrigues formula `I + sin(t)/t [phi]x + (1 - cos t)/t^2 [phi]x^2`, `t = |phi|`.
pub fn exp_map(phi: &TangentVector) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = libm::sqrt(theta2);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (libm::sin(theta) / theta, (1.0 - libm::cos(theta)) / theta2)
    };
    let k = hat(phi);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm `phi (R - R^T) / (2 sin phi)` with `phi = acos((tr R - 1) / 2)`.
///
/// Fails with [`Error::LogNearPi`] when the angle is within `1e-6` of `pi`,
/// where the closed form degenerates.
pub fn log_map(r: &Rotation) -> Result<TangentVector> {
    let m = r.matrix();
    let angle = trace_angle(m);
    if angle > PI - LOG_PI_MARGIN {
        return Err(Error::LogNearPi { angle });
    }
    let scale = if angle < SMALL_ANGLE {
        0.5 * (1.0 + angle * angle / 6.0)
    } else {
        angle / (2.0 * libm::sin(angle))
    };
    Ok(vee_unchecked(&(m - m.transpose())) * scale)
}

/// Inverse right Jacobian of SO(3):
/// `I + 1/2 [phi]x + (1/t^2 - (1 + cos t) / (2 t sin t)) [phi]x^2`.
pub(crate) fn right_jacobian_inv(phi: &TangentVector) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = libm::sqrt(theta2);
    let k = hat(phi);
    let c = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + libm::cos(theta)) / (2.0 * theta * libm::sin(theta))
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    fn tangent(max_norm: f64) -> impl Strategy<Value = Vector3<f64>> {
        (prop::array::uniform3(-1.0f64..1.0), 1e-6f64..max_norm).prop_filter_map(
            "nonzero axis",
            |(a, len)| {
                let v = Vector3::from(a);
                (v.norm() > 1e-3).then(|| v.normalize() * len)
            },
        )
    }

    #[test]
    fn hat_matches_definition() {
        let s = hat(&Vector3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(s, expected);
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn vee_inverts_hat_example() {
        let s = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(vee(&s).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn vee_rejects_symmetric_part() {
        let s = Matrix3::new(1.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert!(matches!(vee(&s), Err(Error::NotSkewSymmetric { .. })));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_map(&Vector3::zeros()), Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = exp_map(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let y = r * Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(y, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_map(&Rotation::identity()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn log_recovers_small_vector() {
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(log_map(&exp_map(&phi)).unwrap(), phi, epsilon = 1e-10);
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = exp_map(&Vector3::new(0.0, PI, 0.0));
        assert!(matches!(log_map(&r), Err(Error::LogNearPi { .. })));
        let r = exp_map(&Vector3::new(0.0, PI - 1e-7, 0.0));
        assert!(matches!(log_map(&r), Err(Error::LogNearPi { .. })));
    }

    #[test]
    fn from_matrix_validates() {
        assert!(Rotation::from_matrix(Matrix3::identity()).is_ok());
        assert!(Rotation::from_matrix(Matrix3::identity() * 1.01).is_err());
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::from_matrix(reflection).is_err());
    }

    #[test]
    fn tiny_angles_use_taylor_branch() {
        let phi = Vector3::new(3e-9, -1e-9, 2e-9);
        let r = exp_map(&phi);
        assert!(r.orthonormality_defect() < 1e-15);
        assert_relative_eq!(
            log_map(&r).unwrap(),
            phi,
            epsilon = 1e-20,
            max_relative = 1e-6
        );
    }

    #[test]
    fn right_jacobian_inverse_branches_agree() {
        let phi = Vector3::new(0.6, 0.0, 0.8) * 1e-5;
        let k = hat(&phi);
        let t2 = phi.norm_squared();
        let t = t2.sqrt();
        let closed = Matrix3::identity()
            + k * 0.5
            + k * k * (1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin()));
        assert_relative_eq!(right_jacobian_inv(&phi), closed, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(a in prop::array::uniform3(-10.0f64..10.0),
                                b in prop::array::uniform3(-10.0f64..10.0)) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let s = hat(&a);
            prop_assert!((s * b - a.cross(&b)).amax() <= 1e-12);
            prop_assert_eq!(s, -s.transpose());
        }

        #[test]
        fn vee_hat_round_trip(v in prop::array::uniform3(-10.0f64..10.0)) {
            let v = Vector3::from(v);
            prop_assert_eq!(vee(&hat(&v)).unwrap(), v);
        }

        #[test]
        fn exp_is_orthonormal(phi in tangent(3.0)) {
            let r = exp_map(&phi);
            prop_assert!(r.orthonormality_defect() < 1e-12);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn log_exp_round_trip(phi in tangent(PI - 0.1)) {
            let back = log_map(&exp_map(&phi)).unwrap();
            prop_assert!((back - phi).norm() < 1e-9);
        }

        #[test]
        fn log_norm_is_trace_angle(phi in tangent(PI - 0.1)) {
            let r = exp_map(&phi);
            let c = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            prop_assert!((log_map(&r).unwrap().norm() - c.acos()).abs() < 1e-9);
        }

        #[test]
        fn composition_stays_in_group(a in tangent(3.0), b in tangent(3.0)) {
            let r = exp_map(&a) * exp_map(&b);
            prop_assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        }

        #[test]
        fn first_order_model(d in tangent(0.01)) {
            let err = (exp_map(&d).matrix() - (Matrix3::identity() + hat(&d))).norm();
            prop_assert!(err <= d.norm_squared());
        }
    }
}
