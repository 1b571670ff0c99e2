//! Nonlinear programming for sparse, smooth problems with bounds.
//!
//! Two solvers share the [`NlpSolver`] interface:
//!
//! * [`InteriorPoint`]: primal-dual barrier method with a filter line search.
//!   Newton steps use a finite-difference Hessian of the Lagrangian and a
//!   sparse symmetric indefinite factorization. This is the default.
//! * [`AugmentedLagrangian`]: inequality slacks, an augmented-Lagrangian
//!   outer loop and a projected limited-memory quasi-Newton inner solver.
//!   Matrix-free; fine for small and medium problems.
//!
//! Problems are posed through the [`Problem`] trait.

mod auglag;
mod hessian;
mod ipm;
mod kkt;
mod lbfgsb;
mod ldl;
mod problem;
mod scaling;

use std::fmt;
use std::time::Duration;

use thiserror::Error;

pub use auglag::AugmentedLagrangian;
pub use ipm::InteriorPoint;
pub use kkt::{kkt_report, KktReport};
pub use lbfgsb::{minimize_bound_constrained, BoundedResult, BoundedStatus};
pub use ldl::{Inertia, SkylineLdl};
pub use problem::{ConstraintKind, EvalError, Problem, SparsityPattern};

/// Settings of the projected limited-memory quasi-Newton solver.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolverOptions {
    /// number of stored correction pairs
    pub memory: usize,
    pub max_iterations: usize,
    /// projected-gradient infinity norm at which the inner solve stops
    pub tolerance: f64,
}

impl Default for InnerSolverOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 2000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// target for the scaled optimality error (stationarity, complementarity)
    pub tolerance_kkt: f64,
    /// target for the largest scaled constraint violation
    pub tolerance_constraint: f64,
    /// initial augmented-Lagrangian penalty
    pub penalty_init: f64,
    /// factor applied to the penalty when feasibility stalls
    pub penalty_growth: f64,
    pub inner_solver: InnerSolverOptions,
    /// initial barrier parameter of the interior-point method
    pub barrier_init: f64,
    /// barrier parameter used when dual information is supplied
    pub barrier_init_warm: f64,
    /// relative distance by which a cold start is pushed inside its bounds
    pub bound_push: f64,
    /// same for warm starts
    pub bound_push_warm: f64,
    /// relative relaxation of variable bounds inside the barrier; returned
    /// points are clipped back onto the original bounds
    pub bound_relax: f64,
    /// largest Newton step, relative to `max(1, |x|)` per scaled variable,
    /// before the interior-point method adds primal regularization and resolves
    pub max_step_ratio: f64,
    /// 0 silent, 1 one log line per iteration, 2 adds line-search detail
    pub verbosity: u8,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            tolerance_kkt: 1e-6,
            tolerance_constraint: 1e-7,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            inner_solver: InnerSolverOptions::default(),
            barrier_init: 0.1,
            barrier_init_warm: 1e-4,
            bound_push: 1e-2,
            bound_push_warm: 1e-6,
            bound_relax: 1e-8,
            max_step_ratio: 1.0,
            verbosity: 0,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptionsError {
    #[error("{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error("penalty_growth must exceed 1")]
    PenaltyGrowth,
    #[error("inner solver memory must be at least 1")]
    Memory,
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), OptionsError> {
        let positive = [
            ("tolerance_kkt", self.tolerance_kkt),
            ("tolerance_constraint", self.tolerance_constraint),
            ("penalty_init", self.penalty_init),
            ("barrier_init", self.barrier_init),
            ("barrier_init_warm", self.barrier_init_warm),
            ("bound_push", self.bound_push),
            ("bound_push_warm", self.bound_push_warm),
            ("inner_solver.tolerance", self.inner_solver.tolerance),
            ("max_step_ratio", self.max_step_ratio),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OptionsError::NotPositive(name));
            }
        }
        if !(self.bound_relax.is_finite() && self.bound_relax >= 0.0) {
            return Err(OptionsError::NotPositive("bound_relax"));
        }
        if !(self.penalty_growth.is_finite() && self.penalty_growth > 1.0) {
            return Err(OptionsError::PenaltyGrowth);
        }
        if self.inner_solver.memory == 0 {
            return Err(OptionsError::Memory);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
    Infeasible,
    NumericFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Infeasible => "infeasible",
            Status::NumericFailure => "numeric_failure",
        };
        f.write_str(s)
    }
}

/// Lagrange multipliers in the convention `L = f + lambda^T c - z_l^T (x - l) + z_u^T (x - u)`
/// with `lambda_i >= 0` on inequality rows and `z_l, z_u >= 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    pub constraints: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub point: Vec<f64>,
    pub objective_value: f64,
    /// largest scaled violation of constraints (bounds are always met)
    pub max_constraint_violation: f64,
    /// scaled optimality error at `point`
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    pub duals: Duals,
    pub message: String,
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// scaled constraint violation
    pub feasibility: f64,
    /// barrier parameter or augmented-Lagrangian penalty
    pub penalty: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} objective={:.12e} feasibility={:.6e} penalty={:.6e}",
            self.iteration, self.objective, self.feasibility, self.penalty
        )
    }
}

/// Rejected input, as opposed to a run that fails to converge.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("initial point has length {got}, problem has {expected} variables")]
    InitialLength { expected: usize, got: usize },
    #[error("multiplier vector `{name}` has length {got}, expected {expected}")]
    DualLength {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("bounds of variable {0} are inconsistent")]
    Bounds(usize),
    #[error("jacobian pattern entry {0} is out of range")]
    Pattern(usize),
    #[error(transparent)]
    Options(#[from] OptionsError),
}

pub trait NlpSolver {
    fn name(&self) -> &str;

    /// Solves from primal point `initial`, optionally warm-started with
    /// `duals`. `log` receives one record per outer iteration.
    fn solve_with(
        &self,
        problem: &dyn Problem,
        initial: &[f64],
        duals: Option<&Duals>,
        log: &mut dyn FnMut(&IterationRecord),
    ) -> Result<SolveResult, SolveError>;

    fn solve(&self, problem: &dyn Problem, initial: &[f64]) -> Result<SolveResult, SolveError> {
        self.solve_with(problem, initial, None, &mut |_| {})
    }
}

/// Solves with the default solver.
pub fn solve(
    problem: &dyn Problem,
    initial: &[f64],
    opts: &SolverOptions,
) -> Result<SolveResult, SolveError> {
    InteriorPoint::new(opts.clone()).solve(problem, initial)
}

pub(crate) fn validate_input(
    problem: &dyn Problem,
    initial: &[f64],
    duals: Option<&Duals>,
) -> Result<(), SolveError> {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    if initial.len() != n {
        return Err(SolveError::InitialLength {
            expected: n,
            got: initial.len(),
        });
    }
    let (lo, hi) = (problem.lower_bounds(), problem.upper_bounds());
    for j in 0..n {
        if lo[j].is_nan() || hi[j].is_nan() || lo[j] > hi[j] || lo[j] == f64::INFINITY || hi[j] == f64::NEG_INFINITY {
            return Err(SolveError::Bounds(j));
        }
    }
    let pat = problem.jacobian_pattern();
    for k in 0..pat.len() {
        if pat.rows[k] >= m || pat.cols[k] >= n || pat.constant.len() != pat.len() {
            return Err(SolveError::Pattern(k));
        }
    }
    if let Some(d) = duals {
        for (name, v, expected) in [
            ("constraints", &d.constraints, m),
            ("lower", &d.lower, n),
            ("upper", &d.upper, n),
        ] {
            if v.len() != expected {
                return Err(SolveError::DualLength {
                    name,
                    expected,
                    got: v.len(),
                });
            }
        }
    }
    Ok(())
}

/// Largest violation of `c_E = 0`, `c_I <= 0`.
pub(crate) fn constraint_violation(kinds: &[ConstraintKind], c: &[f64]) -> f64 {
    kinds
        .iter()
        .zip(c)
        .map(|(k, v)| match k {
            ConstraintKind::Equality => v.abs(),
            ConstraintKind::Inequality => v.max(0.0),
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_options_are_valid() {
        SolverOptions::default().validate().unwrap();
    }

    #[test]
    fn rejects_penalty_growth_at_one() {
        let opts = SolverOptions {
            penalty_growth: 1.0,
            ..Default::default()
        };
        assert_eq!(opts.validate(), Err(OptionsError::PenaltyGrowth));
    }

    #[test]
    fn iteration_record_is_key_value() {
        let r = IterationRecord {
            iteration: 3,
            objective: 1.5,
            feasibility: 2e-3,
            penalty: 10.0,
        };
        assert_eq!(
            r.to_string(),
            "iter=3 objective=1.500000000000e0 feasibility=2.000000e-3 penalty=1.000000e1"
        );
    }
}
