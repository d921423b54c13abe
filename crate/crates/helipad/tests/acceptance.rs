//! Acceptance suite. Run with
//! `cargo test -p helipad --test acceptance -- --nocapture --test-threads=1`
//! to see one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use helipad::certify::{certify, TOLERANCE};
use helipad::report::{self, landmark_errors, pose_errors};
use helipad_core::graph::min_landmarks;
use helipad_core::manifold::{exp_map, log_map};
use helipad_core::sim::{perturb_initialization, InitPreset, NoiseSpec, Scenario};
use helipad_core::solver::{solve, solve_observed, SolveReport};
use helipad_core::{SolverConfig, WindowState};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

fn verdict(criterion: u32, pass: bool, detail: String) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

struct Run {
    truth: WindowState,
    report: SolveReport,
}

fn reference_run(seed: u64) -> Run {
    let data = Scenario::reference(seed).generate().unwrap();
    let init = perturb_initialization(&data, InitPreset::Hover).unwrap();
    let problem = data.problem(init).unwrap();
    let report = solve(&problem, &SolverConfig::default()).unwrap();
    Run {
        truth: data.ground_truth,
        report,
    }
}

fn reference_runs() -> Vec<Run> {
    (0..SEEDS).map(reference_run).collect()
}

#[test]
fn criterion_1_manifold() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut round_trip, mut defect) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let norm = rng.random_range(1e-9..std::f64::consts::PI - 0.1);
        let phi = dir * norm;
        let r = exp_map(&phi);
        round_trip = round_trip.max((log_map(&r).unwrap() - phi).norm());
        defect = defect.max(r.orthonormality_defect());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        round_trip < 1e-9 && defect < 1e-12 && secs < 1.0,
        format!("round trip {round_trip:e}, orthonormality {defect:e}, {secs:.3} s"),
    );
}

#[test]
fn criterion_2_jacobian_certification() {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_helipad"))
        .args(["check-jacobians", "--trials", "100", "--seed", "0"])
        .output()
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let report = certify(0, 100, None);
    let worst = report
        .blocks
        .iter()
        .map(|b| b.max_rel_error)
        .fold(0.0, f64::max);
    let dv_zero = report.block("vision.e_photo/dv").unwrap().max_abs_analytic == 0.0;
    verdict(
        2,
        out.status.success() && report.passed() && worst < TOLERANCE && dv_zero && secs < 10.0,
        format!(
            "{} blocks, worst relative error {worst:e}, velocity block zero {dv_zero}, {secs:.3} s",
            report.blocks.len()
        ),
    );
}

#[test]
fn criterion_3_zero_noise_exactness() {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut s = Scenario::reference(seed);
        s.noise = NoiseSpec {
            seed,
            ..NoiseSpec::noiseless()
        };
        let data = s.generate().unwrap();
        let problem = data.problem(data.ground_truth.clone()).unwrap();
        worst = worst.max(problem.residual().unwrap().norm());
    }
    verdict(3, worst < 1e-9, format!("max residual norm {worst:e}"));
}

#[test]
fn criterion_4_constraint_exactness() {
    let data = Scenario::reference(4).generate().unwrap();
    let mut init = perturb_initialization(&data, InitPreset::Hover).unwrap();
    for l in init.landmarks.iter_mut() {
        l.z = 0.5;
    }
    let problem = data.problem(init).unwrap();
    let mut worst = 0.0f64;
    let mut observed = 0;
    let report = solve_observed(&problem, &SolverConfig::default(), |_, w| {
        observed += 1;
        worst = worst.max(w.landmarks.iter().map(|l| l.z.abs()).fold(0.0, f64::max));
    })
    .unwrap();
    verdict(
        4,
        worst < 1e-9 && observed == report.iterations_run && observed == 50,
        format!("max |z| over {observed} iterations {worst:e}"),
    );
}

#[test]
fn criterion_5_reference_experiment() {
    let runs = reference_runs();
    let mut cost_ok = 0;
    let mut pose_ok = 0;
    let mut landmark_ok = 0;
    let mut vertical_exact = true;
    let mut frame1_exact = true;
    let mut worst_cost = 0.0f64;
    for run in &runs {
        let r = &run.report;
        worst_cost = worst_cost.max(r.final_cost);
        if r.final_cost <= 0.01 * r.cost_history[0] && r.final_cost <= 1.0 {
            cost_ok += 1;
        }
        let poses = pose_errors(&r.final_window, &run.truth);
        if poses.iter().all(|p| p.position.norm() < 0.5) {
            pose_ok += 1;
        }
        frame1_exact &= poses[0].position == Vector3::zeros() && poses[0].rotation_angle == 0.0;
        let lms = landmark_errors(&r.final_window, &run.truth);
        if lms.iter().all(|l| l.position.xy().norm() < 0.10) {
            landmark_ok += 1;
        }
        vertical_exact &= lms.iter().all(|l| l.position.z == 0.0);
    }
    verdict(
        5,
        cost_ok == SEEDS && pose_ok >= 18 && landmark_ok >= 18 && vertical_exact && frame1_exact,
        format!(
            "cost {cost_ok}/20 (worst final {worst_cost:.4}), poses {pose_ok}/20, landmarks {landmark_ok}/20, \
             vertical exact {vertical_exact}, frame 1 exact {frame1_exact}"
        ),
    );
}

#[test]
fn criterion_6_min_landmarks() {
    let brute = |n: usize| (1..).find(|&k| k * (2 * n - 3) > 9).unwrap();
    let scan_ok = (2..=20).all(|n| min_landmarks(n).unwrap() == brute(n));
    let n2 = min_landmarks(2).unwrap();
    let n6 = min_landmarks(6).unwrap();
    verdict(
        6,
        n6 == 1 && n2 == 10 && scan_ok,
        format!("n=6 gives {n6} (expected 1), n=2 gives {n2} (expected 10), brute-force scan matches {scan_ok}"),
    );
}

#[test]
fn criterion_7_performance() {
    let data = Scenario::reference(0).generate().unwrap();
    let problem = data
        .problem(perturb_initialization(&data, InitPreset::Hover).unwrap())
        .unwrap();
    let a = problem.assemble().unwrap();
    let start = Instant::now();
    let report = solve(&problem, &SolverConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let shape = (a.jacobian.nrows(), a.jacobian.ncols());
    verdict(
        7,
        secs < 5.0 && report.iterations_run == 50 && shape == (96, 63),
        format!(
            "{} iterations on a {}x{} Jacobian in {secs:.3} s",
            report.iterations_run, shape.0, shape.1
        ),
    );
}

#[test]
fn criterion_8_error_growth() {
    let mut count = 0;
    for run in reference_runs() {
        let mut norms: Vec<f64> = pose_errors(&run.report.final_window, &run.truth)
            .iter()
            .map(|p| p.position.norm())
            .collect();
        let last = *norms.last().unwrap();
        norms.sort_by(f64::total_cmp);
        let median = norms[norms.len() / 2];
        if last > median {
            count += 1;
        }
    }
    verdict(
        8,
        count >= 14,
        format!("last keyframe above median in {count}/20 seeds"),
    );
}

fn run_cli(dir: &Path, seed: &str) {
    for args in [
        vec!["simulate", "--seed", seed, "--out", dir.to_str().unwrap()],
        vec!["estimate", "--out", dir.to_str().unwrap()],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_helipad"))
            .args(&args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn criterion_9_determinism() {
    let files = [
        "dataset.txt",
        report::CONVERGENCE_FILE,
        report::POSE_ERROR_FILE,
        report::LANDMARK_ERROR_FILE,
        report::SUMMARY_FILE,
    ];
    let mut identical = 0;
    let mut compared = 0;
    for seed in ["0", "7"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_cli(a.path(), seed);
        run_cli(b.path(), seed);
        for f in files {
            compared += 1;
            if fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap() {
                identical += 1;
            }
        }
    }
    let certify_same = certify(5, 10, None).render() == certify(5, 10, None).render();
    verdict(
        9,
        identical == compared && certify_same,
        format!("{identical}/{compared} report files identical, certification report identical {certify_same}"),
    );
}
