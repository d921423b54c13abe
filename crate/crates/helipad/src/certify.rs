//! Finite-difference certification of the analytic Jacobians.
//!
//! Each analytic block is compared against central differences (step 1e-6)
//! of the corresponding residual, perturbed through the boxplus retraction.
//! The error of a block is `|A - F| / max(|F|, 1)` in the Frobenius norm,
//! maximized over all random instances.

use helipad_core::graph::{retract_pose, Problem};
use helipad_core::imu::{imu_residual, imu_residual_jacobian, ImuSample, PreintegratedDelta};
use helipad_core::manifold::exp_map;
use helipad_core::sim::{NoiseSpec, Scenario};
use helipad_core::vision::{photometric_jacobian, photometric_residual};
use helipad_core::{CameraModel, PixelMeasurement, PoseState, WorldParams};
use nalgebra::{DMatrix, DVector, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

const IMU_ROWS: [&str; 3] = ["r_rot", "r_vel", "r_pos"];
const IMU_COLS: [&str; 6] = ["dR_i", "dv_i", "dp_i", "dR_j", "dv_j", "dp_j"];
const VISION_COLS: [&str; 4] = ["dR", "dv", "dp", "dp_l"];
const GRAPH_SHAPES: [(usize, usize); 6] = [(2, 1), (2, 3), (3, 1), (3, 3), (7, 1), (7, 3)];

/// Test hook: perturb one family of analytic Jacobians before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Corruption {
    Imu,
    Vision,
    Graph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest analytic entry magnitude seen for this block.
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub trials: usize,
    pub blocks: Vec<BlockResult>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < TOLERANCE)
    }

    pub fn block(&self, name: &str) -> Option<&BlockResult> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "jacobian certification: {} trials, step {STEP:e}, tolerance {TOLERANCE:e}\n",
            self.trials
        );
        out.push_str("block,max_rel_error,max_abs_analytic,status\n");
        for b in &self.blocks {
            let status = if b.max_rel_error < TOLERANCE {
                "PASS"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{},{:e},{:e},{status}\n",
                b.name, b.max_rel_error, b.max_abs_analytic
            ));
        }
        out.push_str(if self.passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        out
    }
}

struct Tracker {
    blocks: Vec<BlockResult>,
}

impl Tracker {
    fn new(names: impl IntoIterator<Item = String>) -> Self {
        Self {
            blocks: names
                .into_iter()
                .map(|name| BlockResult {
                    name,
                    max_rel_error: 0.0,
                    max_abs_analytic: 0.0,
                })
                .collect(),
        }
    }

    fn record(&mut self, idx: usize, analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) {
        let rel = (analytic - numeric).norm() / numeric.norm().max(1.0);
        let b = &mut self.blocks[idx];
        b.max_rel_error = b
            .max_rel_error
            .max(if rel.is_nan() { f64::INFINITY } else { rel });
        b.max_abs_analytic = b.max_abs_analytic.max(analytic.amax());
    }
}

fn uniform3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseState {
    PoseState::new(
        exp_map(&uniform3(rng, 1.2)),
        uniform3(rng, 3.0),
        uniform3(rng, 5.0),
    )
}

fn central_difference<const R: usize>(
    cols: usize,
    mut eval: impl FnMut(usize, f64) -> SVector<f64, R>,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(R, cols);
    for c in 0..cols {
        let d = (eval(c, STEP) - eval(c, -STEP)) / (2.0 * STEP);
        jac.set_column(c, &d);
    }
    jac
}

fn certify_imu(rng: &mut ChaCha8Rng, tracker: &mut Tracker, corrupt: bool) {
    let world = WorldParams::default();
    let samples: Vec<ImuSample> = (0..rng.random_range(1..40))
        .map(|_| ImuSample::new(uniform3(rng, 1.0), uniform3(rng, 12.0), 0.02))
        .collect();
    let delta = PreintegratedDelta::from_samples(&samples);
    let pi = random_pose(rng);
    let pj = PoseState::new(
        pi.rotation * delta.d_rot * exp_map(&uniform3(rng, 0.5)),
        uniform3(rng, 3.0),
        uniform3(rng, 5.0),
    );
    let mut analytic = DMatrix::from_column_slice(
        9,
        18,
        imu_residual_jacobian(&delta, &pi, &pj, &world)
            .expect("random instance stays away from pi")
            .as_slice(),
    );
    if corrupt {
        analytic[(4, 13)] += 1e-3;
    }
    let numeric = central_difference::<9>(18, |c, h| {
        let mut d = SVector::<f64, 9>::zeros();
        d[c % 9] = h;
        if c < 9 {
            imu_residual(&delta, &retract_pose(&pi, &d), &pj, &world)
        } else {
            imu_residual(&delta, &pi, &retract_pose(&pj, &d), &world)
        }
        .expect("perturbation is tiny")
    });
    for r in 0..3 {
        for c in 0..6 {
            let a = analytic.view((3 * r, 3 * c), (3, 3)).into_owned();
            let n = numeric.view((3 * r, 3 * c), (3, 3)).into_owned();
            tracker.record(6 * r + c, &a, &n);
        }
    }
}

fn certify_vision(rng: &mut ChaCha8Rng, tracker: &mut Tracker, offset: usize, corrupt: bool) {
    let cam = CameraModel {
        focal: rng.random_range(0.5..800.0),
        principal_point: Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
    };
    let pose = random_pose(rng);
    let depth = rng.random_range(1.0..8.0);
    let q = Vector3::new(
        rng.random_range(-1.0..1.0) * depth,
        rng.random_range(-1.0..1.0) * depth,
        depth,
    );
    let lm = pose.position + pose.rotation.matrix() * q;
    let meas = PixelMeasurement {
        frame_index: 1,
        landmark_id: 1,
        uv: Vector2::zeros(),
    };
    let jac = photometric_jacobian(&cam, &pose, &lm).expect("landmark in front");
    let mut analytic = DMatrix::from_column_slice(2, 12, jac.as_slice());
    if corrupt {
        analytic[(1, 0)] *= 1.0 + 1e-3;
        analytic[(1, 0)] += 1e-3;
    }
    let numeric = central_difference::<2>(12, |c, h| {
        if c < 9 {
            let mut d = SVector::<f64, 9>::zeros();
            d[c] = h;
            photometric_residual(&cam, &retract_pose(&pose, &d), &lm, &meas)
        } else {
            let mut d = Vector3::zeros();
            d[c - 9] = h;
            photometric_residual(&cam, &pose, &(lm + d), &meas)
        }
        .expect("landmark in front")
    });
    for b in 0..4 {
        let a = analytic.view((0, 3 * b), (2, 3)).into_owned();
        let n = numeric.view((0, 3 * b), (2, 3)).into_owned();
        tracker.record(offset + b, &a, &n);
    }
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, nl: usize) -> Problem {
    let mut s = Scenario::reference(rng.random());
    s.trajectory.duration = s.trajectory.camera_dt * (n - 1) as f64;
    s.landmarks.truncate(nl);
    s.noise = NoiseSpec {
        seed: rng.random(),
        ..s.noise
    };
    let d = s.generate().expect("reference scenario is valid");
    let mut w = d.ground_truth.clone();
    for p in w.poses.iter_mut() {
        *p = PoseState::new(
            p.rotation * exp_map(&uniform3(rng, 0.3)),
            p.velocity + uniform3(rng, 1.0),
            p.position + uniform3(rng, 0.5),
        );
    }
    for l in w.landmarks.iter_mut() {
        *l += uniform3(rng, 0.3);
    }
    d.problem(w).expect("consistent dataset")
}

fn certify_graph(
    rng: &mut ChaCha8Rng,
    tracker: &mut Tracker,
    idx: usize,
    trial: usize,
    corrupt: bool,
) {
    let (n, nl) = GRAPH_SHAPES[trial % GRAPH_SHAPES.len()];
    let problem = random_problem(rng, n, nl);
    let mut analytic = problem
        .assemble()
        .expect("jittered window keeps depth")
        .jacobian;
    if corrupt {
        analytic[(0, 0)] += 1e-2;
    }
    let dim = problem.window.dim();
    let mut numeric = DMatrix::zeros(problem.residual_len(), dim);
    let mut shifted = problem.clone();
    for c in 0..dim {
        let mut d = DVector::zeros(dim);
        d[c] = STEP;
        shifted.window = problem.window.boxplus(&d).expect("length matches");
        let plus = shifted.residual().expect("tiny step");
        shifted.window = problem.window.boxplus(&-d).expect("length matches");
        let minus = shifted.residual().expect("tiny step");
        numeric.set_column(c, &((plus - minus) / (2.0 * STEP)));
    }
    tracker.record(idx, &analytic, &numeric);
}

/// Runs `trials` random instances of each Jacobian family.
pub fn certify(seed: u64, trials: usize, corruption: Option<Corruption>) -> CertificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = IMU_ROWS
        .iter()
        .flat_map(|r| IMU_COLS.iter().map(move |c| format!("imu.{r}/{c}")))
        .chain(VISION_COLS.iter().map(|c| format!("vision.e_photo/{c}")))
        .chain(std::iter::once("graph.stacked".to_owned()));
    let mut tracker = Tracker::new(names);
    let vision_offset = IMU_ROWS.len() * IMU_COLS.len();
    let graph_idx = vision_offset + VISION_COLS.len();
    for trial in 0..trials {
        certify_imu(&mut rng, &mut tracker, corruption == Some(Corruption::Imu));
        certify_vision(
            &mut rng,
            &mut tracker,
            vision_offset,
            corruption == Some(Corruption::Vision),
        );
        certify_graph(
            &mut rng,
            &mut tracker,
            graph_idx,
            trial,
            corruption == Some(Corruption::Graph),
        );
    }
    CertificationReport {
        trials,
        blocks: tracker.blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let r = certify(1, 6, None);
        assert!(r.passed(), "{}", r.render());
        assert_eq!(r.blocks.len(), 18 + 4 + 1);
        assert_eq!(r.block("vision.e_photo/dv").unwrap().max_abs_analytic, 0.0);
        assert_eq!(r.block("imu.r_rot/dv_j").unwrap().max_abs_analytic, 0.0);
    }

    #[test]
    fn corruption_is_detected() {
        for c in [Corruption::Imu, Corruption::Vision, Corruption::Graph] {
            assert!(!certify(1, 2, Some(c)).passed(), "{c:?}");
        }
    }
}
