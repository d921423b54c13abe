//! Damped Gauss-Newton (Levenberg-Marquardt with fixed damping) over the
//! window, optionally holding landmark altitudes at zero through a KKT solve.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::graph::{Problem, WindowState};
use crate::{Error, Result};

/// Relative singular-value threshold used to report rank deficiency.
const RANK_TOLERANCE: f64 = 1e-12;

/// Iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Damping `alpha` added to the Gauss-Newton diagonal.
    pub damping: f64,
    /// Iteration budget.
    pub max_iterations: usize,
    /// Enforce `z = 0` on every landmark.
    pub constrain_altitude: bool,
    /// Stop once the step norm falls below this; 0 runs every iteration.
    pub convergence_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.1,
            max_iterations: 50,
            constrain_altitude: true,
            convergence_tol: 0.0,
        }
    }
}

impl SolverConfig {
    /// Checks `damping >= 0`, `max_iterations >= 1` and `convergence_tol >= 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Invalid(alloc::format!(
                "damping {} must be >= 0",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Invalid("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Invalid("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Weighted cost before each step.
    pub cost_history: Vec<f64>,
    /// Euclidean norm of each step.
    pub step_norms: Vec<f64>,
    /// Estimate after the last step.
    pub final_window: WindowState,
    /// Cost at `final_window`.
    pub final_cost: f64,
    /// Number of steps taken.
    pub iterations_run: usize,
}

/// Failure part-way through [`solve`], carrying the history so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveError {
    /// Zero-based iteration at which the failure happened.
    pub iteration: usize,
    /// Costs recorded before the failure.
    pub cost_history: Vec<f64>,
    /// Step norms recorded before the failure.
    pub step_norms: Vec<f64>,
    /// Underlying error.
    pub source: Error,
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "solver failed at iteration {}: {}",
            self.iteration, self.source
        )
    }
}

impl core::error::Error for SolveError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Damped normal equations `H = J^T W J + alpha I`, `g = J^T W e`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    /// Damped Gauss-Newton Hessian.
    pub hessian: DMatrix<f64>,
    /// Gradient `J^T W e`.
    pub gradient: DVector<f64>,
    /// Cost `e^T W e` at the linearization point.
    pub cost: f64,
}

/// Linearizes `problem` and forms the damped normal equations.
pub fn build_normal_system(problem: &Problem, damping: f64) -> Result<NormalSystem> {
    let a = problem.assemble()?;
    let mut wj = a.jacobian.clone();
    for (mut row, w) in wj.row_iter_mut().zip(a.weights.iter()) {
        row *= *w;
    }
    let mut hessian = a.jacobian.tr_mul(&wj);
    // exact symmetry, independent of summation order
    for r in 0..hessian.nrows() {
        for c in 0..r {
            hessian[(r, c)] = hessian[(c, r)];
        }
    }
    for d in 0..hessian.nrows() {
        hessian[(d, d)] += damping;
    }
    let gradient = wj.tr_mul(&a.residual);
    Ok(NormalSystem {
        hessian,
        gradient,
        cost: a.cost(),
    })
}

fn rank_deficiency(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if !(max > 0.0) {
        return m.nrows();
    }
    sv.iter()
        .filter(|s| **s <= RANK_TOLERANCE * max)
        .count()
        .max(1)
}

fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    match lu.solve(rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::SingularSystem {
            deficiency: rank_deficiency(&m),
        }),
    }
}

/// Unconstrained step: solves `H delta = -g`.
pub fn plain_step(hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> Result<DVector<f64>> {
    if hessian.shape() != (gradient.len(), gradient.len()) {
        return Err(Error::Dimension {
            expected: gradient.len(),
            actual: hessian.nrows(),
        });
    }
    solve_dense(hessian.clone(), &-gradient)
}

/// Solves the equality-constrained step
///
/// ```text
/// [ H   Jh^T ] [ delta  ]   [ -g ]
/// [ Jh   0   ] [ lambda ] = [ -c ]
/// ```
///
/// so that `Jh delta = -c` drives the constrained quantities to zero. The
/// returned `delta` is projected back onto `Jh delta = -c` to remove
/// round-off from the factorization.
pub fn constrained_step(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    jh: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dim = gradient.len();
    let m = jh.nrows();
    if hessian.shape() != (dim, dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: hessian.nrows(),
        });
    }
    if jh.ncols() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: jh.ncols(),
        });
    }
    if c.len() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: c.len(),
        });
    }
    if m == 0 {
        return Ok((plain_step(hessian, gradient)?, DVector::zeros(0)));
    }

    let mut kkt = DMatrix::zeros(dim + m, dim + m);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(hessian);
    kkt.view_mut((0, dim), (dim, m)).copy_from(&jh.transpose());
    kkt.view_mut((dim, 0), (m, dim)).copy_from(jh);
    let mut rhs = DVector::zeros(dim + m);
    rhs.rows_mut(0, dim).copy_from(&-gradient);
    rhs.rows_mut(dim, m).copy_from(&-c);

    let sol = solve_dense(kkt, &rhs)?;
    let mut delta = sol.rows(0, dim).into_owned();
    let lambda = sol.rows(dim, m).into_owned();

    // minimum-norm correction onto Jh delta = -c
    let violation = -c - jh * &delta;
    let gram = jh * jh.transpose();
    let y = solve_dense(gram, &violation)?;
    delta += jh.tr_mul(&y);
    Ok((delta, lambda))
}

/// Runs the fixed-damping iteration: linearize, solve the (constrained)
/// step, retract. Records the cost before each step.
pub fn solve(problem: &Problem, config: &SolverConfig) -> Result<SolveReport, SolveError> {
    solve_observed(problem, config, |_, _| {})
}

/// [`solve`], calling `observer(iteration, window)` with the one-based
/// iteration number after every retraction.
pub fn solve_observed(
    problem: &Problem,
    config: &SolverConfig,
    mut observer: impl FnMut(usize, &WindowState),
) -> Result<SolveReport, SolveError> {
    let fail = |iteration, costs: &Vec<f64>, steps: &Vec<f64>, source| SolveError {
        iteration,
        cost_history: costs.clone(),
        step_norms: steps.clone(),
        source,
    };
    let mut costs = Vec::with_capacity(config.max_iterations);
    let mut steps = Vec::with_capacity(config.max_iterations);
    config.validate().map_err(|e| fail(0, &costs, &steps, e))?;
    problem.validate().map_err(|e| fail(0, &costs, &steps, e))?;

    let mut current = problem.clone();
    for it in 0..config.max_iterations {
        let normal = build_normal_system(&current, config.damping)
            .map_err(|e| fail(it, &costs, &steps, e))?;
        costs.push(normal.cost);
        let delta = if config.constrain_altitude {
            let (jh, c) = current.altitude_constraint();
            constrained_step(&normal.hessian, &normal.gradient, &jh, &c).map(|(d, _)| d)
        } else {
            plain_step(&normal.hessian, &normal.gradient)
        }
        .map_err(|e| fail(it, &costs, &steps, e))?;
        let step_norm = delta.norm();
        steps.push(step_norm);
        current.window = current
            .window
            .boxplus(&delta)
            .map_err(|e| fail(it, &costs, &steps, e))?;
        observer(it + 1, &current.window);
        if step_norm < config.convergence_tol {
            break;
        }
    }
    let iterations_run = costs.len();
    let final_cost = current
        .cost()
        .map_err(|e| fail(iterations_run, &costs, &steps, e))?;
    Ok(SolveReport {
        cost_history: costs,
        step_norms: steps,
        final_window: current.window,
        final_cost,
        iterations_run,
    })
}
