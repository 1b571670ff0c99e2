//! Augmented-Lagrangian method with explicit inequality slacks.
//!
//! Each outer iteration minimizes
//!
//! ```text
//! f(x) + lambda^T h(x, s) + rho/2 |h(x, s)|^2,   h = (c_E, c_I + s)
//! ```
//!
//! over the box `lower <= x <= upper`, `s >= 0` with the projected L-BFGS
//! solver, then either updates the multipliers or raises the penalty.

use std::time::Instant;

use crate::lbfgsb::{minimize_bound_constrained, BoundedStatus};
use crate::problem::{check_finite_vector, ConstraintKind, EvalError, Problem};
use crate::scaling::Scaled;
use crate::{
    constraint_violation, validate_input, Duals, IterationRecord, NlpSolver, SolveError,
    SolveResult, SolverOptions, Status,
};

const PENALTY_MAX: f64 = 1e12;

#[derive(Debug, Clone, Default)]
pub struct AugmentedLagrangian {
    pub options: SolverOptions,
}

impl AugmentedLagrangian {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

struct Inner<'a> {
    prob: Scaled<'a>,
    n: usize,
    m: usize,
    /// slack variable index for each inequality row
    slack_of: Vec<Option<usize>>,
}

impl Inner<'_> {
    fn residual(&self, z: &[f64], c: &mut [f64]) -> Result<(), EvalError> {
        self.prob.constraints(&z[..self.n], c)?;
        if let Some(r) = check_finite_vector(c) {
            return Err(EvalError::NonFiniteConstraint(r));
        }
        for r in 0..self.m {
            if let Some(k) = self.slack_of[r] {
                c[r] += z[k];
            }
        }
        Ok(())
    }

    /// Augmented Lagrangian value and gradient in `(x, s)`.
    fn value(&self, z: &[f64], grad: &mut [f64], lam: &[f64], rho: f64) -> Result<f64, EvalError> {
        let n = self.n;
        let f = self.prob.objective(&z[..n])?;
        if !f.is_finite() {
            return Err(EvalError::NonFiniteObjective);
        }
        self.prob.gradient(&z[..n], &mut grad[..n])?;
        if let Some(j) = check_finite_vector(&grad[..n]) {
            return Err(EvalError::NonFiniteGradient(j));
        }
        let mut h = vec![0.0; self.m];
        self.residual(z, &mut h)?;
        let pat = self.prob.jacobian_pattern();
        let mut jac = vec![0.0; pat.len()];
        self.prob.jacobian_values(&z[..n], &mut jac)?;
        let w: Vec<f64> = (0..self.m).map(|r| lam[r] + rho * h[r]).collect();
        for k in 0..pat.len() {
            grad[pat.cols[k]] += w[pat.rows[k]] * jac[k];
        }
        for g in grad[n..].iter_mut() {
            *g = 0.0;
        }
        for r in 0..self.m {
            if let Some(k) = self.slack_of[r] {
                grad[k] = w[r];
            }
        }
        let aug: f64 = (0..self.m).map(|r| lam[r] * h[r] + 0.5 * rho * h[r] * h[r]).sum();
        Ok(f + aug)
    }
}

impl NlpSolver for AugmentedLagrangian {
    fn name(&self) -> &str {
        "augmented-lagrangian"
    }

    fn solve_with(
        &self,
        problem: &dyn Problem,
        initial: &[f64],
        duals: Option<&Duals>,
        log: &mut dyn FnMut(&IterationRecord),
    ) -> Result<SolveResult, SolveError> {
        validate_input(problem, initial, duals)?;
        let opts = &self.options;
        opts.validate()?;
        let started = Instant::now();
        let prob = Scaled::new(problem);
        let n = prob.num_variables();
        let m = prob.num_constraints();
        let kinds = prob.constraint_kinds().to_vec();
        let ineq: Vec<bool> = kinds.iter().map(|k| *k == ConstraintKind::Inequality).collect();
        let mut slack_of = vec![None; m];
        let mut nz = n;
        for r in 0..m {
            if ineq[r] {
                slack_of[r] = Some(nz);
                nz += 1;
            }
        }
        let sf = prob.objective_factor();
        let inv_sx = prob.to_scaled(&vec![1.0; n]);
        let sc = prob.constraint_scale().to_vec();
        let mut lo = prob.lower_bounds().to_vec();
        let mut hi = prob.upper_bounds().to_vec();
        lo.resize(nz, 0.0);
        hi.resize(nz, f64::INFINITY);
        let inner = Inner { prob, n, m, slack_of };

        let mut z = inner.prob.to_scaled(initial);
        z.resize(nz, 0.0);
        for j in 0..n {
            z[j] = z[j].clamp(lo[j], hi[j]);
        }
        let mut c0 = vec![0.0; m];
        if let Err(e) = inner.prob.constraints(&z[..n], &mut c0).and_then(|_| {
            check_finite_vector(&c0).map_or(Ok(()), |r| Err(EvalError::NonFiniteConstraint(r)))
        }) {
            return Ok(failure(initial, m, n, format!("at the initial point: {e}"), started));
        }
        for r in 0..m {
            if let Some(k) = inner.slack_of[r] {
                z[k] = (-c0[r]).max(0.0);
            }
        }
        let mut lam = match duals {
            Some(d) => (0..m).map(|r| d.constraints[r] * sf / sc[r]).collect(),
            None => vec![0.0; m],
        };
        let mut rho = opts.penalty_init;
        let mut omega = 1.0 / rho;
        let mut eta = 1.0 / rho.powf(0.1);
        let mut h = vec![0.0; m];
        let mut grad = vec![0.0; nz];
        let mut status = Status::MaxIter;
        let mut message = String::from("iteration limit reached");
        let mut iterations = 0;
        let mut kkt = f64::INFINITY;
        let mut viol = f64::INFINITY;
        let mut f_val = f64::NAN;
        while iterations < opts.max_iterations {
            iterations += 1;
            let mut inner_opts = opts.inner_solver.clone();
            inner_opts.tolerance = omega.max(opts.inner_solver.tolerance.min(opts.tolerance_kkt));
            let res = minimize_bound_constrained(|zz, gg| inner.value(zz, gg, &lam, rho), &z, &lo, &hi, &inner_opts);
            if let BoundedStatus::Eval(e) = &res.status {
                status = Status::NumericFailure;
                message = e.to_string();
                break;
            }
            z = res.x;
            if inner.residual(&z, &mut h).is_err() {
                status = Status::NumericFailure;
                message = String::from("constraint evaluation failed after the inner solve");
                break;
            }
            let mut c = vec![0.0; m];
            let _ = inner.prob.constraints(&z[..n], &mut c);
            viol = constraint_violation(&kinds, &c);
            let feas = h.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if feas <= eta {
                for r in 0..m {
                    lam[r] += rho * h[r];
                }
                omega = (omega / rho).max(opts.tolerance_kkt * 0.1);
                eta = (eta / rho.powf(0.9)).max(opts.tolerance_constraint * 0.1);
            } else {
                rho *= opts.penalty_growth;
                omega = 1.0 / rho;
                eta = 1.0 / rho.powf(0.1);
            }
            // optimality of the plain Lagrangian with the updated multipliers
            let _ = inner.value(&z, &mut grad, &lam, 0.0);
            kkt = (0..nz)
                .map(|j| ((z[j] - grad[j]).clamp(lo[j], hi[j]) - z[j]).abs())
                .fold(0.0, f64::max);
            f_val = inner.prob.objective(&z[..n]).unwrap_or(f64::NAN) / sf;
            let record = IterationRecord { iteration: iterations, objective: f_val, feasibility: viol, penalty: rho };
            if opts.verbosity >= 1 {
                log::info!("{record}");
            }
            log(&record);
            if feas <= opts.tolerance_constraint && kkt <= opts.tolerance_kkt {
                status = Status::Converged;
                message = String::from("optimal point found");
                break;
            }
            if rho > PENALTY_MAX {
                status = Status::Infeasible;
                message = format!("penalty limit reached with violation {feas:.3e}");
                break;
            }
        }

        let lo_orig = problem.lower_bounds();
        let hi_orig = problem.upper_bounds();
        let mut x = inner.prob.to_unscaled(&z[..n]);
        for j in 0..n {
            x[j] = x[j].clamp(lo_orig[j], hi_orig[j]);
        }
        let _ = inner.value(&z, &mut grad, &lam, 0.0);
        let (mut lower, mut upper) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            if z[j] <= lo[j] {
                lower[j] = grad[j].max(0.0) * inv_sx[j] / sf;
            }
            if z[j] >= hi[j] {
                upper[j] = (-grad[j]).max(0.0) * inv_sx[j] / sf;
            }
        }
        Ok(SolveResult {
            status,
            point: x,
            objective_value: f_val,
            max_constraint_violation: viol,
            kkt_residual: kkt,
            iterations,
            wall_time: started.elapsed(),
            duals: Duals {
                constraints: (0..m).map(|r| lam[r] * sc[r] / sf).collect(),
                lower,
                upper,
            },
            message,
        })
    }
}

fn failure(initial: &[f64], m: usize, n: usize, message: String, started: Instant) -> SolveResult {
    SolveResult {
        status: Status::NumericFailure,
        point: initial.to_vec(),
        objective_value: f64::NAN,
        max_constraint_violation: f64::INFINITY,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        wall_time: started.elapsed(),
        duals: Duals {
            constraints: vec![0.0; m],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        },
        message,
    }
}
