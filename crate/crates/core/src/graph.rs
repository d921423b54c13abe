//! Window state, boxplus retraction, and assembly of the stacked weighted
//! least-squares problem.
//!
//! Column layout of every increment and Jacobian: for keyframes `2..=n`,
//! `[dR(3), dv(3), dp(3)]`, followed by `dp_l(3)` for each landmark. Keyframe 1
//! is the fixed prior and has no columns.
//!
//! Row layout: the `n - 1` IMU factors (9 rows each, in keyframe order), then
//! every reprojection residual (2 rows each) ordered by keyframe, then landmark.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SVector, Vector3};

use crate::imu::{imu_residual, imu_residual_jacobian, PreintegratedDelta, WorldParams};
use crate::manifold::{exp_map, Rotation};
use crate::vision::{
    landmark_in_body, photometric_jacobian, photometric_residual, CameraModel, PixelMeasurement,
};
use crate::{Error, Result};

/// Default weight on reprojection rows; IMU rows carry weight 1.
pub const DEFAULT_PHOTOMETRIC_WEIGHT: f64 = 1000.0;

/// Degrees of freedom per keyframe.
pub const POSE_DOF: usize = 9;
/// Degrees of freedom per landmark.
pub const LANDMARK_DOF: usize = 3;

/// Attitude, velocity and position of the body at one keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseState {
    /// Body-to-world rotation.
    pub rotation: Rotation,
    /// World-frame velocity, m/s.
    pub velocity: Vector3<f64>,
    /// World-frame position, m.
    pub position: Vector3<f64>,
}

impl PoseState {
    /// Builds a pose.
    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        Self {
            rotation,
            velocity,
            position,
        }
    }

    /// Identity attitude at rest at the origin.
    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), Vector3::zeros())
    }

    fn is_finite(&self) -> bool {
        self.rotation
            .matrix()
            .iter()
            .chain(self.velocity.iter())
            .chain(self.position.iter())
            .all(|x| x.is_finite())
    }
}

/// Applies `[dR, dv, dp]` to one pose: `R Exp(dR)`, `v + dv`, `p + R dp`.
/// The position update uses the pre-update rotation.
pub fn retract_pose(pose: &PoseState, delta: &SVector<f64, 9>) -> PoseState {
    let d_rot = delta.fixed_rows::<3>(0).into_owned();
    let d_vel = delta.fixed_rows::<3>(3).into_owned();
    let d_pos = delta.fixed_rows::<3>(6).into_owned();
    PoseState {
        rotation: pose.rotation * exp_map(&d_rot),
        velocity: pose.velocity + d_vel,
        position: pose.position + pose.rotation.matrix() * d_pos,
    }
}

/// The optimization variable: `n` keyframe poses and `N` landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    /// Keyframe poses in time order. The first is the fixed prior.
    pub poses: Vec<PoseState>,
    /// Landmark positions in the world frame.
    pub landmarks: Vec<Vector3<f64>>,
}

impl WindowState {
    /// Builds a window, requiring `n >= 2`, `N >= 1` and finite entries.
    pub fn new(poses: Vec<PoseState>, landmarks: Vec<Vector3<f64>>) -> Result<Self> {
        let w = Self { poses, landmarks };
        w.validate()?;
        Ok(w)
    }

    /// Checks the window invariants.
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() < 2 {
            return Err(Error::InvalidWindow(self.poses.len()));
        }
        if self.landmarks.is_empty() {
            return Err(Error::Invalid("window needs at least one landmark".into()));
        }
        if !self.poses.iter().all(PoseState::is_finite)
            || !self
                .landmarks
                .iter()
                .all(|l| l.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Invalid("window has non-finite entries".into()));
        }
        Ok(())
    }

    /// Window length `n`.
    pub fn pose_count(&self) -> usize {
        self.poses.len()
    }

    /// Landmark count `N`.
    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    /// Increment dimension `9 (n - 1) + 3 N`.
    pub fn dim(&self) -> usize {
        POSE_DOF * (self.poses.len() - 1) + LANDMARK_DOF * self.landmarks.len()
    }

    /// First column of keyframe `index` (zero-based, `index >= 1`).
    pub fn pose_column(&self, index: usize) -> Option<usize> {
        (1..self.poses.len())
            .contains(&index)
            .then(|| POSE_DOF * (index - 1))
    }

    /// First column of landmark `index` (zero-based).
    pub fn landmark_column(&self, index: usize) -> Option<usize> {
        (index < self.landmarks.len())
            .then(|| POSE_DOF * (self.poses.len() - 1) + LANDMARK_DOF * index)
    }

    /// Boxplus: retracts every updatable pose and adds landmark increments.
    /// Keyframe 1 is left untouched.
    pub fn boxplus(&self, delta: &DVector<f64>) -> Result<WindowState> {
        if delta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: delta.len(),
            });
        }
        let mut out = self.clone();
        for (k, pose) in out.poses.iter_mut().enumerate().skip(1) {
            let col = POSE_DOF * (k - 1);
            *pose = retract_pose(pose, &delta.fixed_rows::<9>(col).into_owned());
        }
        let base = POSE_DOF * (self.poses.len() - 1);
        for (i, lm) in out.landmarks.iter_mut().enumerate() {
            *lm += delta.fixed_rows::<3>(base + LANDMARK_DOF * i);
        }
        Ok(out)
    }
}

/// Stacked residual, Jacobian and diagonal weights at one linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    /// Stacked residual `e`.
    pub residual: DVector<f64>,
    /// `de / d(delta)` in boxplus column order.
    pub jacobian: DMatrix<f64>,
    /// Diagonal of `W`.
    pub weights: DVector<f64>,
}

impl Assembly {
    /// Weighted cost `e^T W e`.
    pub fn cost(&self) -> f64 {
        self.residual
            .component_mul(&self.residual)
            .dot(&self.weights)
    }
}

/// A window together with the factors that constrain it.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    /// Current estimate.
    pub window: WindowState,
    /// IMU factors between consecutive keyframes (`n - 1` of them).
    pub deltas: Vec<PreintegratedDelta>,
    /// Reprojection measurements, sorted by keyframe then landmark.
    pub measurements: Vec<PixelMeasurement>,
    /// Camera intrinsics.
    pub cam: CameraModel,
    /// Gravity.
    pub world: WorldParams,
    /// Weight on each reprojection row.
    pub photometric_weight: f64,
}

impl Problem {
    /// Builds and validates a problem. Measurements are sorted into residual
    /// order; the photometric weight defaults to 1000.
    pub fn new(
        window: WindowState,
        deltas: Vec<PreintegratedDelta>,
        mut measurements: Vec<PixelMeasurement>,
        cam: CameraModel,
        world: WorldParams,
    ) -> Result<Self> {
        measurements.sort_by_key(|m| (m.frame_index, m.landmark_id));
        let p = Self {
            window,
            deltas,
            measurements,
            cam,
            world,
            photometric_weight: DEFAULT_PHOTOMETRIC_WEIGHT,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the problem invariants.
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.cam.validate()?;
        let n = self.window.pose_count();
        let nl = self.window.landmark_count();
        if self.deltas.len() != n - 1 {
            return Err(Error::Invalid(alloc::format!(
                "{} preintegrated deltas for a window of {n} keyframes (need {})",
                self.deltas.len(),
                n - 1
            )));
        }
        if let Some(m) = self
            .measurements
            .iter()
            .find(|m| !(1..=n).contains(&m.frame_index) || !(1..=nl).contains(&m.landmark_id))
        {
            return Err(Error::Invalid(alloc::format!(
                "measurement (frame {}, landmark {}) out of range",
                m.frame_index,
                m.landmark_id
            )));
        }
        if !(self.photometric_weight >= 0.0) {
            return Err(Error::Invalid("photometric weight must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of residual rows.
    pub fn residual_len(&self) -> usize {
        POSE_DOF * self.deltas.len() + 2 * self.measurements.len()
    }

    fn measurement_row(&self, k: usize) -> usize {
        POSE_DOF * self.deltas.len() + 2 * k
    }

    fn depth_error(&self, m: &PixelMeasurement) -> Error {
        let pose = &self.window.poses[m.frame_index - 1];
        let depth = landmark_in_body(pose, &self.window.landmarks[m.landmark_id - 1]).z;
        Error::MeasurementDepth {
            frame: m.frame_index,
            landmark: m.landmark_id,
            depth,
        }
    }

    /// Stacked residual only.
    pub fn residual(&self) -> Result<DVector<f64>> {
        let mut e = DVector::zeros(self.residual_len());
        let poses = &self.window.poses;
        for (i, delta) in self.deltas.iter().enumerate() {
            let r = imu_residual(delta, &poses[i], &poses[i + 1], &self.world)?;
            e.fixed_rows_mut::<9>(POSE_DOF * i).copy_from(&r);
        }
        for (k, m) in self.measurements.iter().enumerate() {
            let pose = &poses[m.frame_index - 1];
            let lm = &self.window.landmarks[m.landmark_id - 1];
            let r =
                photometric_residual(&self.cam, pose, lm, m).map_err(|_| self.depth_error(m))?;
            e.fixed_rows_mut::<2>(self.measurement_row(k)).copy_from(&r);
        }
        Ok(e)
    }

    /// Diagonal of `W`: ones on IMU rows, the photometric weight on the rest.
    pub fn weights(&self) -> DVector<f64> {
        let imu_rows = POSE_DOF * self.deltas.len();
        DVector::from_fn(self.residual_len(), |r, _| {
            if r < imu_rows {
                1.0
            } else {
                self.photometric_weight
            }
        })
    }

    /// Residual, analytic Jacobian and weights at the current window.
    pub fn assemble(&self) -> Result<Assembly> {
        let w = &self.window;
        let residual = self.residual()?;
        let mut jacobian = DMatrix::zeros(self.residual_len(), w.dim());
        for (i, delta) in self.deltas.iter().enumerate() {
            let jac = imu_residual_jacobian(delta, &w.poses[i], &w.poses[i + 1], &self.world)?;
            let row = POSE_DOF * i;
            if let Some(col) = w.pose_column(i) {
                jacobian
                    .view_mut((row, col), (9, 9))
                    .copy_from(&jac.fixed_columns::<9>(0));
            }
            let col = w.pose_column(i + 1).expect("pose j is never the prior");
            jacobian
                .view_mut((row, col), (9, 9))
                .copy_from(&jac.fixed_columns::<9>(9));
        }
        for (k, m) in self.measurements.iter().enumerate() {
            let pose = &w.poses[m.frame_index - 1];
            let lm = &w.landmarks[m.landmark_id - 1];
            let jac = photometric_jacobian(&self.cam, pose, lm).map_err(|_| self.depth_error(m))?;
            let row = self.measurement_row(k);
            if let Some(col) = w.pose_column(m.frame_index - 1) {
                jacobian
                    .view_mut((row, col), (2, 9))
                    .copy_from(&jac.fixed_columns::<9>(0));
            }
            let col = w
                .landmark_column(m.landmark_id - 1)
                .expect("validated landmark id");
            jacobian
                .view_mut((row, col), (2, 3))
                .copy_from(&jac.fixed_columns::<3>(9));
        }
        Ok(Assembly {
            residual,
            jacobian,
            weights: self.weights(),
        })
    }

    /// Weighted cost `e^T W e`.
    pub fn cost(&self) -> Result<f64> {
        let e = self.residual()?;
        Ok(e.component_mul(&e).dot(&self.weights()))
    }

    /// Altitude constraint rows `J_h` (one unit entry per landmark, on its
    /// z column) and the current altitudes `c`.
    pub fn altitude_constraint(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = &self.window;
        let nl = w.landmark_count();
        let mut jh = DMatrix::zeros(nl, w.dim());
        for i in 0..nl {
            jh[(i, w.landmark_column(i).expect("in range") + 2)] = 1.0;
        }
        let c = DVector::from_iterator(nl, w.landmarks.iter().map(|l| l.z));
        (jh, c)
    }
}

/// Smallest landmark count `N` with `N > 9 / (2n - 3)`, the row-count
/// condition for an `n`-keyframe window.
pub fn min_landmarks(n: usize) -> Result<usize> {
    let denom = (2 * n)
        .checked_sub(3)
        .filter(|d| *d > 0)
        .ok_or(Error::InvalidWindow(n))?;
    Ok(9 / denom + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::exp_map;
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn window(n: usize, nl: usize) -> WindowState {
        let poses = (0..n)
            .map(|k| {
                let t = k as f64;
                PoseState::new(
                    exp_map(&Vector3::new(0.05 * t, -0.03 * t, 0.1 * t)),
                    Vector3::new(0.2 * t, 0.1, 0.0),
                    Vector3::new(0.1 * t, -0.05 * t, -4.0 + 0.1 * t),
                )
            })
            .collect();
        let landmarks = (0..nl)
            .map(|i| Vector3::new(0.5 * i as f64 - 0.5, 0.3 * i as f64, 0.0))
            .collect();
        WindowState::new(poses, landmarks).unwrap()
    }

    fn problem(n: usize, nl: usize) -> Problem {
        let w = window(n, nl);
        let deltas = (0..n - 1)
            .map(|_| PreintegratedDelta {
                dt_total: 0.4,
                ..Default::default()
            })
            .collect();
        let mut meas = Vec::new();
        for f in (1..=n).rev() {
            for l in 1..=nl {
                meas.push(PixelMeasurement {
                    frame_index: f,
                    landmark_id: l,
                    uv: Vector2::new(0.01, -0.02),
                });
            }
        }
        Problem::new(
            w,
            deltas,
            meas,
            CameraModel::new(1.0),
            WorldParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_increment_is_identity() {
        let w = window(4, 2);
        assert_eq!(w.boxplus(&DVector::zeros(w.dim())).unwrap(), w);
    }

    #[test]
    fn position_increment_follows_rotation() {
        let mut w = window(2, 1);
        w.poses[1].rotation = Rotation::identity();
        let mut d = DVector::zeros(w.dim());
        d[6] = 1.0;
        let out = w.boxplus(&d).unwrap();
        assert_eq!(
            out.poses[1].position - w.poses[1].position,
            Vector3::new(1.0, 0.0, 0.0)
        );

        let yaw = exp_map(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        w.poses[1].rotation = yaw;
        let out = w.boxplus(&d).unwrap();
        let shift = out.poses[1].position - w.poses[1].position;
        assert_eq!(shift, yaw.matrix() * Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(shift, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!(out.poses[0], w.poses[0]);
    }

    #[test]
    fn boxplus_rejects_wrong_length() {
        let w = window(3, 2);
        assert!(matches!(
            w.boxplus(&DVector::zeros(5)),
            Err(Error::Dimension {
                expected: 24,
                actual: 5
            })
        ));
    }

    #[test]
    fn reference_window_dimensions() {
        let p = problem(7, 3);
        let a = p.assemble().unwrap();
        assert_eq!(a.residual.len(), 96);
        assert_eq!(a.jacobian.shape(), (96, 63));
        assert!(a.weights.rows(0, 54).iter().all(|&w| w == 1.0));
        assert!(a.weights.rows(54, 42).iter().all(|&w| w == 1000.0));
        assert_eq!(a.residual.len(), (7 - 1) * 9 + 7 * 3 * 2);
    }

    #[test]
    fn measurements_are_ordered() {
        let p = problem(3, 2);
        let keys: Vec<_> = p
            .measurements
            .iter()
            .map(|m| (m.frame_index, m.landmark_id))
            .collect();
        assert_eq!(keys, [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)]);
    }

    #[test]
    fn cost_weights_photometric_rows() {
        let w = WindowState::new(
            alloc::vec![PoseState::identity(), PoseState::identity()],
            alloc::vec![Vector3::new(0.0, 0.0, 1.0)],
        )
        .unwrap();
        let deltas = alloc::vec![PreintegratedDelta {
            dt_total: 1.0,
            ..Default::default()
        }];
        let meas = alloc::vec![PixelMeasurement {
            frame_index: 1,
            landmark_id: 1,
            uv: Vector2::new(-1.0, 0.0)
        }];
        let mut p = Problem::new(
            w,
            deltas,
            meas,
            CameraModel::new(1.0),
            WorldParams {
                gravity: Vector3::zeros(),
            },
        )
        .unwrap();
        // IMU residual is zero; the one reprojection residual is (1, 0)
        assert_eq!(p.cost().unwrap(), 1000.0);
        p.measurements[0].uv = Vector2::zeros();
        assert_eq!(p.cost().unwrap(), 0.0);
    }

    #[test]
    fn degenerate_depth_names_measurement() {
        let mut p = problem(3, 2);
        p.window.landmarks[1] = p.window.poses[2].position;
        let err = p.assemble().unwrap_err();
        assert!(
            matches!(
                err,
                Error::MeasurementDepth {
                    frame: 3,
                    landmark: 2,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn validation_catches_bad_indices() {
        let mut p = problem(3, 2);
        p.measurements[0].landmark_id = 3;
        assert!(p.validate().is_err());
        let mut p = problem(3, 2);
        p.deltas.pop();
        assert!(p.validate().is_err());
        assert!(WindowState::new(
            alloc::vec![PoseState::identity()],
            alloc::vec![Vector3::zeros()]
        )
        .is_err());
    }

    #[test]
    fn altitude_rows() {
        let p = problem(2, 1);
        let (jh, c) = p.altitude_constraint();
        assert_eq!(jh.shape(), (1, 12));
        let expected: Vec<f64> = [0.0; 9].into_iter().chain([0.0, 0.0, 1.0]).collect();
        assert_eq!(jh.row(0).iter().copied().collect::<Vec<_>>(), expected);
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn min_landmarks_values() {
        assert_eq!(min_landmarks(2).unwrap(), 10);
        assert_eq!(min_landmarks(7).unwrap(), 1);
        assert!(min_landmarks(1).is_err());
        assert!(min_landmarks(0).is_err());
        for n in 2..=20usize {
            let brute = (1..).find(|&nl: &usize| nl * (2 * n - 3) > 9).unwrap();
            assert_eq!(min_landmarks(n).unwrap(), brute, "n = {n}");
        }
    }

    #[test]
    fn sparsity_pattern() {
        let p = problem(4, 2);
        let a = p.assemble().unwrap();
        let w = &p.window;
        // IMU factor between keyframes 2 and 3 (zero-based 1, 2)
        for r in 9..18 {
            for c in 0..w.dim() {
                let allowed = (0..18).contains(&c);
                if !allowed {
                    assert_eq!(a.jacobian[(r, c)], 0.0);
                }
            }
        }
        for (k, m) in p.measurements.iter().enumerate() {
            let row = 27 + 2 * k;
            let pose_cols = w.pose_column(m.frame_index - 1).map(|c| c..c + 9);
            let lm_col = w.landmark_column(m.landmark_id - 1).unwrap();
            for c in 0..w.dim() {
                let allowed = pose_cols.as_ref().is_some_and(|r| r.contains(&c))
                    || (lm_col..lm_col + 3).contains(&c);
                if !allowed {
                    assert_eq!(a.jacobian[(row, c)], 0.0);
                    assert_eq!(a.jacobian[(row + 1, c)], 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn boxplus_injective_for_small_rotations(
            a in prop::collection::vec(-0.05f64..0.05, 15),
            b in prop::collection::vec(-0.05f64..0.05, 15),
        ) {
            let w = window(2, 2);
            let (da, db) = (DVector::from_vec(a), DVector::from_vec(b));
            prop_assume!((&da - &db).amax() > 1e-9);
            prop_assert_ne!(w.boxplus(&da).unwrap(), w.boxplus(&db).unwrap());
        }
    }
}
