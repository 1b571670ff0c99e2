//! First-order optimality residuals of a candidate point.

use crate::problem::{ConstraintKind, Problem};
use crate::{constraint_violation, Duals};

/// Residual norms (infinity norms, unscaled problem units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `|grad f + J^T lambda - z_l + z_u|`
    pub stationarity: f64,
    /// largest violation of constraints and bounds
    pub primal_feasibility: f64,
    /// largest of `|lambda_i c_i|` on inequality rows, `|z (x - bound)|`, and
    /// any multiplier with the wrong sign
    pub complementarity: f64,
}

/// Evaluates the residuals at `point` with multipliers `duals`.
///
/// Empty `duals.lower`/`duals.upper` vectors ask for the bound multipliers
/// to be inferred: the part of the Lagrangian gradient pushing into an
/// active bound is attributed to that bound. Evaluation failures yield
/// infinite residuals.
pub fn kkt_report(problem: &dyn Problem, point: &[f64], duals: &Duals) -> KktReport {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    let failed = KktReport {
        stationarity: f64::INFINITY,
        primal_feasibility: f64::INFINITY,
        complementarity: f64::INFINITY,
    };
    assert_eq!(point.len(), n, "point length");
    assert_eq!(duals.constraints.len(), m, "constraint multiplier length");
    let mut g = vec![0.0; n];
    let mut c = vec![0.0; m];
    let pat = problem.jacobian_pattern();
    let mut jac = vec![0.0; pat.len()];
    if problem.gradient(point, &mut g).is_err()
        || problem.constraints(point, &mut c).is_err()
        || problem.jacobian_values(point, &mut jac).is_err()
    {
        return failed;
    }
    for k in 0..pat.len() {
        g[pat.cols[k]] += duals.constraints[pat.rows[k]] * jac[k];
    }
    let lo = problem.lower_bounds();
    let hi = problem.upper_bounds();
    let kinds = problem.constraint_kinds();

    let mut primal = constraint_violation(kinds, &c);
    for j in 0..n {
        primal = primal.max(lo[j] - point[j]).max(point[j] - hi[j]);
    }

    let mut compl = 0.0f64;
    for r in 0..m {
        if kinds[r] == ConstraintKind::Inequality {
            let l = duals.constraints[r];
            compl = compl.max((l * c[r]).abs()).max(-l);
        }
    }

    let infer = duals.lower.is_empty() && duals.upper.is_empty();
    let mut stat = 0.0f64;
    for j in 0..n {
        let mut r = g[j];
        if infer {
            let at_lo = lo[j].is_finite() && point[j] - lo[j] <= 1e-9 * lo[j].abs().max(1.0);
            let at_hi = hi[j].is_finite() && hi[j] - point[j] <= 1e-9 * hi[j].abs().max(1.0);
            if at_lo && r > 0.0 {
                r = 0.0;
            } else if at_hi && r < 0.0 {
                r = 0.0;
            }
        } else {
            assert_eq!(duals.lower.len(), n, "lower multiplier length");
            assert_eq!(duals.upper.len(), n, "upper multiplier length");
            let (zl, zu) = (duals.lower[j], duals.upper[j]);
            r += zu - zl;
            if lo[j].is_finite() {
                compl = compl.max((zl * (point[j] - lo[j])).abs());
            }
            if hi[j].is_finite() {
                compl = compl.max((zu * (hi[j] - point[j])).abs());
            }
            compl = compl.max(-zl).max(-zu);
        }
        stat = stat.max(r.abs());
    }
    KktReport {
        stationarity: stat,
        primal_feasibility: primal,
        complementarity: compl,
    }
}
