//! Estimation reports: convergence trace and per-keyframe / per-landmark
//! errors against ground truth, written as CSV with a one-line header.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use helipad_core::WindowState;
use nalgebra::Vector3;

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const POSE_ERROR_FILE: &str = "pose_errors.csv";
pub const LANDMARK_ERROR_FILE: &str = "landmark_errors.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.txt";

/// Estimate minus truth for one keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub frame: usize,
    pub position: Vector3<f64>,
    /// Angle of `R_true^T R_est`, rad.
    pub rotation_angle: f64,
}

/// Estimate minus truth for one landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkError {
    pub id: usize,
    pub position: Vector3<f64>,
}

pub fn pose_errors(estimate: &WindowState, truth: &WindowState) -> Vec<PoseError> {
    estimate
        .poses
        .iter()
        .zip(&truth.poses)
        .enumerate()
        .map(|(i, (e, t))| PoseError {
            frame: i + 1,
            position: e.position - t.position,
            rotation_angle: t.rotation.angle_to(&e.rotation),
        })
        .collect()
}

pub fn landmark_errors(estimate: &WindowState, truth: &WindowState) -> Vec<LandmarkError> {
    estimate
        .landmarks
        .iter()
        .zip(&truth.landmarks)
        .enumerate()
        .map(|(i, (e, t))| LandmarkError {
            id: i + 1,
            position: e - t,
        })
        .collect()
}

pub fn convergence_csv(costs: &[f64], steps: &[f64]) -> String {
    let mut out = String::from("iteration,cost,step_norm\n");
    for (i, c) in costs.iter().enumerate() {
        let step = steps.get(i).map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", i + 1, c, step);
    }
    out
}

pub fn pose_error_csv(rows: &[PoseError]) -> String {
    let mut out = String::from("frame,dx,dy,dz,rot_angle_error_rad\n");
    for r in rows {
        let p = r.position;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.frame, p.x, p.y, p.z, r.rotation_angle
        );
    }
    out
}

pub fn landmark_error_csv(rows: &[LandmarkError]) -> String {
    let mut out = String::from("id,dx,dy,dz\n");
    for r in rows {
        let p = r.position;
        let _ = writeln!(out, "{},{},{},{}", r.id, p.x, p.y, p.z);
    }
    out
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub keyframes: usize,
    pub landmarks: usize,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub max_position_error: f64,
    pub max_landmark_error: f64,
    pub constrained: bool,
}

pub fn summary_csv(s: &Summary) -> String {
    format!(
        "key,value\nkeyframes,{}\nlandmarks,{}\niterations,{}\ninitial_cost,{}\nfinal_cost,{}\n\
         max_position_error_m,{}\nmax_landmark_error_m,{}\nconstrain_altitude,{}\n",
        s.keyframes,
        s.landmarks,
        s.iterations,
        s.initial_cost,
        s.final_cost,
        s.max_position_error,
        s.max_landmark_error,
        s.constrained
    )
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    std::fs::write(dir.join(name), contents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use helipad_core::manifold::exp_map;
    use helipad_core::PoseState;

    #[test]
    fn convergence_layout() {
        let s = convergence_csv(&[10.0, 0.5], &[1.25, 0.0]);
        assert_eq!(s, "iteration,cost,step_norm\n1,10,1.25\n2,0.5,0\n");
        // partial history after a failure: cost without a step
        assert_eq!(
            convergence_csv(&[3.0], &[]),
            "iteration,cost,step_norm\n1,3,\n"
        );
    }

    #[test]
    fn errors_are_estimate_minus_truth() {
        let truth = WindowState::new(
            vec![PoseState::identity(), PoseState::identity()],
            vec![Vector3::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        let mut est = truth.clone();
        est.poses[1].position.x = 0.25;
        est.poses[1].rotation = exp_map(&Vector3::new(0.0, 0.0, 0.1));
        est.landmarks[0].y = -0.5;
        let p = pose_errors(&est, &truth);
        assert_eq!(p[0].position, Vector3::zeros());
        assert_eq!(p[0].rotation_angle, 0.0);
        assert_eq!(p[1].position, Vector3::new(0.25, 0.0, 0.0));
        assert!((p[1].rotation_angle - 0.1).abs() < 1e-12);
        assert_eq!(
            landmark_error_csv(&landmark_errors(&est, &truth)),
            "id,dx,dy,dz\n1,0,-0.5,0\n"
        );
        assert!(pose_error_csv(&p).starts_with("frame,dx,dy,dz,rot_angle_error_rad\n1,0,0,0,0\n"));
    }
}
