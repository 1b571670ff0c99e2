//! Projected limited-memory BFGS for box-constrained minimization.
//!
//! Variables at a bound whose gradient points outward are held fixed; the
//! quasi-Newton direction is computed on the remaining ones and the step is
//! projected back onto the box during an Armijo backtracking search.

use std::collections::VecDeque;

use crate::problem::EvalError;
use crate::InnerSolverOptions;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundedStatus {
    Converged,
    MaxIter,
    /// no sufficient decrease along the projected direction
    LineSearch,
    Eval(EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// `|P(x - g) - x|` in the infinity norm
    pub projected_gradient: f64,
    pub iterations: usize,
    pub status: BoundedStatus,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| ((x[j] - g[j]).clamp(lo[j], hi[j]) - x[j]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `fg` (returning the value and writing the gradient) over
/// `lo <= x <= hi` starting from the projection of `x0`.
pub fn minimize_bound_constrained(
    mut fg: impl FnMut(&[f64], &mut [f64]) -> Result<f64, EvalError>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &InnerSolverOptions,
) -> BoundedResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = match fg(&x, &mut g) {
        Ok(f) => f,
        Err(e) => {
            return BoundedResult {
                x,
                f: f64::NAN,
                projected_gradient: f64::INFINITY,
                iterations: 0,
                status: BoundedStatus::Eval(e),
            }
        }
    };
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let pg = projected_gradient(&x, &g, lo, hi);
        if pg <= opts.tolerance {
            return BoundedResult { x, f, projected_gradient: pg, iterations, status: BoundedStatus::Converged };
        }
        if iterations >= opts.max_iterations {
            return BoundedResult { x, f, projected_gradient: pg, iterations, status: BoundedStatus::MaxIter };
        }
        iterations += 1;

        let eps = pg.min(1e-3);
        let free: Vec<bool> = (0..n)
            .map(|j| !((x[j] - lo[j] <= eps && g[j] > 0.0) || (hi[j] - x[j] <= eps && g[j] < 0.0)))
            .collect();
        let mut d = two_loop(&g, &free, &pairs);
        // held variables close the remaining gap to their bound
        for j in 0..n {
            if !free[j] {
                d[j] = if g[j] > 0.0 { lo[j] - x[j] } else { hi[j] - x[j] };
            }
        }
        let mut slope: f64 = (0..n).map(|j| g[j] * d[j]).sum();
        if !(slope < 0.0) {
            pairs.clear();
            d = (0..n)
                .map(|j| match (free[j], g[j] > 0.0) {
                    (true, _) => -g[j],
                    (false, true) => lo[j] - x[j],
                    (false, false) => hi[j] - x[j],
                })
                .collect();
            slope = (0..n).map(|j| g[j] * d[j]).sum();
            if !(slope < 0.0) {
                // every free component is zero: move along the projected gradient
                d = (0..n).map(|j| (x[j] - g[j]).clamp(lo[j], hi[j]) - x[j]).collect();
            }
        }
        if pairs.is_empty() {
            // first step: keep its length comparable to the variables
            let dn = d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let xn = x.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            if dn > xn {
                d.iter_mut().for_each(|v| *v *= xn / dn);
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xt, lo, hi);
            let decrease: f64 = (0..n).map(|j| g[j] * (xt[j] - x[j])).sum();
            if let Ok(ft) = fg(&xt, &mut g_new) {
                if ft.is_finite() && ft <= f + 1e-4 * decrease.min(0.0) && g_new.iter().all(|v| v.is_finite()) {
                    accepted = Some((xt, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            return BoundedResult { x, f, projected_gradient: pg, iterations, status: BoundedStatus::LineSearch };
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.max(1e-300).sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if xt == x {
            return BoundedResult { x, f, projected_gradient: pg, iterations, status: BoundedStatus::LineSearch };
        }
        x = xt;
        f = ft;
        std::mem::swap(&mut g, &mut g_new);
    }
}

/// `-H g` restricted to the free variables (two-loop recursion).
fn two_loop(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let n = g.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).filter(|&j| free[j]).map(|j| a[j] * b[j]).sum() };
    let mut q: Vec<f64> = (0..n).map(|j| if free[j] { g[j] } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for j in 0..n {
            if free[j] {
                q[j] -= a * y[j];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let yy = dot(y, y);
        if yy > 0.0 {
            let gamma = dot(s, y) / yy;
            if gamma > 0.0 {
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for j in 0..n {
            if free[j] {
                q[j] += (a - b) * s[j];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let r = minimize_bound_constrained(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
            },
            &[-1.2, 1.0],
            &[f64::NEG_INFINITY; 2],
            &[f64::INFINITY; 2],
            &InnerSolverOptions::default(),
        );
        assert_eq!(r.status, BoundedStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn active_bound_is_held() {
        // minimum of (x-3)^2 + (y+1)^2 over [0,2] x [0,2] is (2, 0)
        let r = minimize_bound_constrained(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * (x[1] + 1.0);
                Ok((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2))
            },
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[2.0, 2.0],
            &InnerSolverOptions::default(),
        );
        assert_eq!(r.status, BoundedStatus::Converged);
        assert_eq!(r.x, vec![2.0, 0.0]);
    }
}
