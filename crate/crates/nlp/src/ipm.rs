//! Primal-dual interior-point method with a filter line search.
//!
//! Inequalities `c_I(x) <= 0` become `c_I(x) + s = 0` with `s >= 0`; bounds on
//! `x` and `s` are handled by a logarithmic barrier. Each iteration factors
//! the reduced KKT matrix
//!
//! ```text
//! [ W + Sigma_x + dw     J^T ]
//! [ J                    -D  ]
//! ```
//!
//! where `D` holds the eliminated slack block, and corrects the inertia by
//! increasing `dw` until the matrix has `n` positive and `m` negative pivots.

use std::time::Instant;

use crate::hessian::HessianApprox;
use crate::ldl::SkylineLdl;
use crate::problem::{check_finite_vector, ConstraintKind, EvalError, Problem};
use crate::scaling::Scaled;
use crate::{
    constraint_violation, validate_input, Duals, IterationRecord, NlpSolver, SolveError,
    SolveResult, SolverOptions, Status,
};

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const ETA_PHI: f64 = 1e-8;
const DELTA: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const MAX_SOC: usize = 4;
const KAPPA_SOC: f64 = 0.99;
const LAMBDA_MAX: f64 = 1e3;
const RESTORATION_MAX: usize = 200;

#[derive(Debug, Clone, Default)]
pub struct InteriorPoint {
    pub options: SolverOptions,
}

impl InteriorPoint {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

impl NlpSolver for InteriorPoint {
    fn name(&self) -> &str {
        "interior-point"
    }

    fn solve_with(
        &self,
        problem: &dyn Problem,
        initial: &[f64],
        duals: Option<&Duals>,
        log: &mut dyn FnMut(&IterationRecord),
    ) -> Result<SolveResult, SolveError> {
        validate_input(problem, initial, duals)?;
        self.options.validate()?;
        let started = Instant::now();
        let mut result = Ipm::new(problem, &self.options).run(initial, duals, log);
        result.wall_time = started.elapsed();
        Ok(result)
    }
}

/// Values of the problem functions at one point.
#[derive(Clone)]
struct Evals {
    f: f64,
    c: Vec<f64>,
}

#[derive(Clone)]
struct Iterate {
    y: Vec<f64>,
    /// slack per row; unused on equality rows
    s: Vec<f64>,
    lam: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    zs: Vec<f64>,
}

struct Step {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dzs: Vec<f64>,
}

/// Residuals and slack curvature the current Newton step was computed from.
struct Linearization<'r> {
    rx: &'r [f64],
    rc: &'r [f64],
    rs: &'r [f64],
    ss: &'r [f64],
}

struct Kkt {
    ldl: SkylineLdl,
    entries: Vec<(usize, usize)>,
    values: Vec<f64>,
    shift: Vec<f64>,
    /// number of Hessian entries at the front of `entries`
    nh: usize,
    last_dw: f64,
    dw: f64,
    dc: f64,
}

struct Ipm<'a> {
    orig: &'a dyn Problem,
    prob: Scaled<'a>,
    opts: &'a SolverOptions,
    n: usize,
    m: usize,
    kinds: Vec<ConstraintKind>,
    ineq: Vec<bool>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    hess: HessianApprox,
    kkt: Kkt,
    mu: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
}

enum Failure {
    Numeric(String),
    Infeasible(String),
}

impl<'a> Ipm<'a> {
    fn new(orig: &'a dyn Problem, opts: &'a SolverOptions) -> Self {
        let prob = Scaled::new(orig);
        let n = prob.num_variables();
        let m = prob.num_constraints();
        let kinds = prob.constraint_kinds().to_vec();
        let ineq: Vec<bool> = kinds
            .iter()
            .map(|k| *k == ConstraintKind::Inequality)
            .collect();
        let mut lo = prob.lower_bounds().to_vec();
        let mut hi = prob.upper_bounds().to_vec();
        for j in 0..n {
            let fixed = lo[j] == hi[j];
            let relax = if fixed {
                opts.bound_relax.max(1e-10)
            } else {
                opts.bound_relax
            };
            if lo[j].is_finite() {
                lo[j] -= relax * lo[j].abs().max(1.0);
            }
            if hi[j].is_finite() {
                hi[j] += relax * hi[j].abs().max(1.0);
            }
        }
        let has_lo = lo.iter().map(|v| v.is_finite()).collect();
        let has_hi = hi.iter().map(|v| v.is_finite()).collect();
        let pat = prob.jacobian_pattern();
        let rows = pat.rows.clone();
        let cols = pat.cols.clone();
        let hess = HessianApprox::new(&prob);

        let mut entries = hess.entries.clone();
        let nh = entries.len();
        entries.extend(rows.iter().zip(&cols).map(|(&r, &c)| (n + r, c)));
        let order = kkt_order(n, m, &hess.entries, &rows, &cols);
        let ldl = SkylineLdl::new(n + m, &entries, &order);
        log::debug!(
            "kkt dimension {} envelope {} hessian groups {}",
            n + m,
            ldl.envelope_size(),
            hess.num_groups()
        );
        let values = vec![0.0; entries.len()];
        Self {
            orig,
            prob,
            opts,
            n,
            m,
            kinds,
            ineq,
            lo,
            hi,
            has_lo,
            has_hi,
            rows,
            cols,
            hess,
            kkt: Kkt {
                ldl,
                entries,
                values,
                shift: vec![0.0; n + m],
                nh,
                last_dw: 0.0,
                dw: 0.0,
                dc: 0.0,
            },
            mu: opts.barrier_init,
            filter: Vec::new(),
            theta_max: f64::INFINITY,
            theta_min: 0.0,
        }
    }

    fn eval(&self, y: &[f64]) -> Result<Evals, EvalError> {
        let f = self.prob.objective(y)?;
        if !f.is_finite() {
            return Err(EvalError::NonFiniteObjective);
        }
        let mut c = vec![0.0; self.m];
        self.prob.constraints(y, &mut c)?;
        if let Some(r) = check_finite_vector(&c) {
            return Err(EvalError::NonFiniteConstraint(r));
        }
        Ok(Evals { f, c })
    }

    fn derivatives(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let mut g = vec![0.0; self.n];
        self.prob.gradient(y, &mut g)?;
        if let Some(j) = check_finite_vector(&g) {
            return Err(EvalError::NonFiniteGradient(j));
        }
        let mut jac = vec![0.0; self.rows.len()];
        self.prob.jacobian_values(y, &mut jac)?;
        if let Some(k) = check_finite_vector(&jac) {
            return Err(EvalError::NonFiniteJacobian {
                row: self.rows[k],
                col: self.cols[k],
            });
        }
        Ok((g, jac))
    }

    /// `grad + J^T lam`
    fn lagrangian_gradient(&self, g: &[f64], jac: &[f64], lam: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        for k in 0..jac.len() {
            out[self.cols[k]] += lam[self.rows[k]] * jac[k];
        }
        out
    }

    fn theta(&self, c: &[f64], s: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| if self.ineq[r] { (c[r] + s[r]).abs() } else { c[r].abs() })
            .sum()
    }

    fn theta_sq(&self, c: &[f64], s: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| if self.ineq[r] { (c[r] + s[r]).powi(2) } else { c[r].powi(2) })
            .sum()
    }

    fn primal_inf(&self, c: &[f64], s: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| if self.ineq[r] { (c[r] + s[r]).abs() } else { c[r].abs() })
            .fold(0.0, f64::max)
    }

    fn barrier(&self, f: f64, y: &[f64], s: &[f64]) -> f64 {
        let mut b = 0.0;
        for j in 0..self.n {
            if self.has_lo[j] {
                b += (y[j] - self.lo[j]).ln();
            }
            if self.has_hi[j] {
                b += (self.hi[j] - y[j]).ln();
            }
        }
        for r in 0..self.m {
            if self.ineq[r] {
                b += s[r].ln();
            }
        }
        f - self.mu * b
    }

    fn barrier_slope(&self, g: &[f64], it: &Iterate, dx: &[f64], ds: &[f64]) -> f64 {
        let mut d = 0.0;
        for j in 0..self.n {
            d += g[j] * dx[j];
            if self.has_lo[j] {
                d -= self.mu * dx[j] / (it.y[j] - self.lo[j]);
            }
            if self.has_hi[j] {
                d += self.mu * dx[j] / (self.hi[j] - it.y[j]);
            }
        }
        for r in 0..self.m {
            if self.ineq[r] {
                d -= self.mu * ds[r] / it.s[r];
            }
        }
        d
    }

    /// Scaled optimality error: (stationarity, complementarity, primal).
    fn errors(&self, it: &Iterate, g: &[f64], jac: &[f64], ev: &Evals, mu: f64) -> (f64, f64, f64) {
        let rx = self.lagrangian_gradient(g, jac, &it.lam);
        let mut dual = 0.0f64;
        let mut compl = 0.0f64;
        let mut zsum = 0.0;
        let mut zcount = 0usize;
        for j in 0..self.n {
            let mut r = rx[j];
            if self.has_lo[j] {
                r -= it.zl[j];
                compl = compl.max(((it.y[j] - self.lo[j]) * it.zl[j] - mu).abs());
                zsum += it.zl[j];
                zcount += 1;
            }
            if self.has_hi[j] {
                r += it.zu[j];
                compl = compl.max(((self.hi[j] - it.y[j]) * it.zu[j] - mu).abs());
                zsum += it.zu[j];
                zcount += 1;
            }
            dual = dual.max(r.abs());
        }
        for r in 0..self.m {
            if self.ineq[r] {
                dual = dual.max((it.lam[r] - it.zs[r]).abs());
                compl = compl.max((it.s[r] * it.zs[r] - mu).abs());
                zsum += it.zs[r];
                zcount += 1;
            }
        }
        let lsum: f64 = it.lam.iter().map(|v| v.abs()).sum();
        let sd = ((lsum + zsum) / ((self.m + zcount).max(1) as f64)).max(S_MAX) / S_MAX;
        let sc = (zsum / (zcount.max(1) as f64)).max(S_MAX) / S_MAX;
        (dual / sd, compl / sc, self.primal_inf(&ev.c, &it.s))
    }

    fn sigma_x(&self, it: &Iterate) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let mut v = 0.0;
                if self.has_lo[j] {
                    v += it.zl[j] / (it.y[j] - self.lo[j]);
                }
                if self.has_hi[j] {
                    v += it.zu[j] / (self.hi[j] - it.y[j]);
                }
                v
            })
            .collect()
    }

    fn sigma_s(&self, it: &Iterate) -> Vec<f64> {
        (0..self.m)
            .map(|r| if self.ineq[r] { it.zs[r] / it.s[r] } else { 0.0 })
            .collect()
    }

    fn set_shift(&mut self, sx: &[f64], ss: &[f64], dw: f64, dc: f64) {
        let n = self.n;
        for j in 0..n {
            self.kkt.shift[j] = sx[j] + dw;
        }
        for r in 0..self.m {
            self.kkt.shift[n + r] = if self.ineq[r] {
                -(1.0 / (ss[r] + dw) + dc)
            } else {
                -dc
            };
        }
    }

    /// Loads `hvals` and `jac`, then factors with inertia correction.
    fn factor(&mut self, hvals: &[f64], jac: &[f64], sx: &[f64], ss: &[f64]) -> Result<(), Failure> {
        let nh = self.kkt.nh;
        self.kkt.values[..nh].copy_from_slice(hvals);
        self.kkt.values[nh..].copy_from_slice(jac);
        let target = (self.n, self.m);
        let mut dc = 0.0;
        let mut dw = 0.0;
        self.set_shift(sx, ss, dw, dc);
        let mut inertia = self.kkt.ldl.factor(&self.kkt.values, &self.kkt.shift);
        if (inertia.positive, inertia.negative) == target && inertia.zero == 0 {
            self.kkt.dw = 0.0;
            self.kkt.dc = 0.0;
            return Ok(());
        }
        if inertia.zero > 0 {
            dc = 1e-8 * self.mu.powf(0.25);
        }
        dw = if self.kkt.last_dw == 0.0 {
            1e-4
        } else {
            (self.kkt.last_dw / 3.0).max(1e-20)
        };
        let growth = if self.kkt.last_dw == 0.0 { 100.0 } else { 8.0 };
        loop {
            self.set_shift(sx, ss, dw, dc);
            inertia = self.kkt.ldl.factor(&self.kkt.values, &self.kkt.shift);
            if (inertia.positive, inertia.negative) == target && inertia.zero == 0 {
                self.kkt.last_dw = dw;
                self.kkt.dw = dw;
                self.kkt.dc = dc;
                return Ok(());
            }
            if inertia.zero > 0 && dc == 0.0 {
                dc = 1e-8 * self.mu.powf(0.25);
            }
            dw *= growth;
            if dw > 1e40 {
                return Err(Failure::Numeric(format!(
                    "KKT matrix could not be regularized (inertia {inertia:?})"
                )));
            }
        }
    }

    fn multiply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().zip(&self.kkt.shift).map(|(a, b)| a * b).collect();
        for (&(i, j), &v) in self.kkt.entries.iter().zip(&self.kkt.values) {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    /// Solves the factored system with two rounds of iterative refinement.
    fn solve_factored(&self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.kkt.ldl.solve(&mut sol);
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut res_norm = f64::INFINITY;
        for _ in 0..2 {
            let kx = self.multiply(&sol);
            let mut res: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            let rn = norm(&res);
            if !(rn < res_norm) || rn <= 1e-14 * norm(rhs).max(1e-300) {
                break;
            }
            res_norm = rn;
            self.kkt.ldl.solve(&mut res);
            for (a, b) in sol.iter_mut().zip(&res) {
                *a += b;
            }
        }
        sol
    }

    /// Newton step for given residuals. `rc[r]` is `c` or `c + s`; `rs` is
    /// the barrier-shifted slack stationarity `lam - mu / s`.
    fn step_from(&self, it: &Iterate, rx: &[f64], rc: &[f64], rs: &[f64], ss: &[f64]) -> Step {
        let (n, m) = (self.n, self.m);
        let dw = self.kkt.dw;
        let mut rhs = vec![0.0; n + m];
        for j in 0..n {
            rhs[j] = -rx[j];
        }
        for r in 0..m {
            rhs[n + r] = if self.ineq[r] {
                -rc[r] + rs[r] / (ss[r] + dw)
            } else {
                -rc[r]
            };
        }
        let sol = self.solve_factored(&rhs);
        let dx = sol[..n].to_vec();
        let dlam = sol[n..].to_vec();
        let mu = self.mu;
        let mut ds = vec![0.0; m];
        let mut dzs = vec![0.0; m];
        for r in 0..m {
            if self.ineq[r] {
                ds[r] = (-rs[r] - dlam[r]) / (ss[r] + dw);
                dzs[r] = mu / it.s[r] - it.zs[r] - ss[r] * ds[r];
            }
        }
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for j in 0..n {
            if self.has_lo[j] {
                let d = it.y[j] - self.lo[j];
                dzl[j] = mu / d - it.zl[j] - it.zl[j] / d * dx[j];
            }
            if self.has_hi[j] {
                let d = self.hi[j] - it.y[j];
                dzu[j] = mu / d - it.zu[j] + it.zu[j] / d * dx[j];
            }
        }
        Step {
            dx,
            ds,
            dlam,
            dzl,
            dzu,
            dzs,
        }
    }

    fn barrier_residuals(&self, it: &Iterate, g: &[f64], jac: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rx = self.lagrangian_gradient(g, jac, &it.lam);
        for j in 0..self.n {
            if self.has_lo[j] {
                rx[j] -= self.mu / (it.y[j] - self.lo[j]);
            }
            if self.has_hi[j] {
                rx[j] += self.mu / (self.hi[j] - it.y[j]);
            }
        }
        let rc: Vec<f64> = (0..self.m)
            .map(|r| if self.ineq[r] { c[r] + it.s[r] } else { c[r] })
            .collect();
        let rs: Vec<f64> = (0..self.m)
            .map(|r| if self.ineq[r] { it.lam[r] - self.mu / it.s[r] } else { 0.0 })
            .collect();
        (rx, rc, rs)
    }

    /// Largest step in (0, 1] keeping primal variables a fraction `tau` away
    /// from their bounds.
    fn max_primal_step(&self, it: &Iterate, dx: &[f64], ds: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for j in 0..self.n {
            if self.has_lo[j] && dx[j] < 0.0 {
                a = a.min(-tau * (it.y[j] - self.lo[j]) / dx[j]);
            }
            if self.has_hi[j] && dx[j] > 0.0 {
                a = a.min(tau * (self.hi[j] - it.y[j]) / dx[j]);
            }
        }
        for r in 0..self.m {
            if self.ineq[r] && ds[r] < 0.0 {
                a = a.min(-tau * it.s[r] / ds[r]);
            }
        }
        a
    }

    /// Name of the bound or slack that limits the primal step, for logging.
    fn blocking(&self, it: &Iterate, dx: &[f64], ds: &[f64]) -> String {
        let mut best = (1.0f64, String::from("none"));
        for j in 0..self.n {
            if self.has_lo[j] && dx[j] < 0.0 {
                let a = -(it.y[j] - self.lo[j]) / dx[j];
                if a < best.0 {
                    best = (a, format!("lower x[{j}]"));
                }
            }
            if self.has_hi[j] && dx[j] > 0.0 {
                let a = (self.hi[j] - it.y[j]) / dx[j];
                if a < best.0 {
                    best = (a, format!("upper x[{j}]"));
                }
            }
        }
        for r in 0..self.m {
            if self.ineq[r] && ds[r] < 0.0 {
                let a = -it.s[r] / ds[r];
                if a < best.0 {
                    best = (a, format!("slack {r}"));
                }
            }
        }
        best.1
    }

    fn max_dual_step(&self, it: &Iterate, st: &Step, tau: f64) -> f64 {
        let mut a = 1.0f64;
        let mut check = |z: f64, dz: f64| {
            if dz < 0.0 {
                a = a.min(-tau * z / dz);
            }
        };
        for j in 0..self.n {
            if self.has_lo[j] {
                check(it.zl[j], st.dzl[j]);
            }
            if self.has_hi[j] {
                check(it.zu[j], st.dzu[j]);
            }
        }
        for r in 0..self.m {
            if self.ineq[r] {
                check(it.zs[r], st.dzs[r]);
            }
        }
        a
    }

    fn trial(&self, it: &Iterate, dx: &[f64], ds: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let y = it.y.iter().zip(dx).map(|(a, b)| a + alpha * b).collect();
        let s = (0..self.m)
            .map(|r| if self.ineq[r] { it.s[r] + alpha * ds[r] } else { 0.0 })
            .collect();
        (y, s)
    }

    fn filter_acceptable(&self, theta: f64, phi: f64) -> bool {
        theta < self.theta_max
            && self
                .filter
                .iter()
                .all(|&(tf, pf)| theta < tf || phi < pf)
    }

    fn reset_filter(&mut self) {
        self.filter.clear();
    }

    /// Keeps bound multipliers within a factor of their centrality values.
    fn safeguard_duals(&self, it: &mut Iterate) {
        let mu = self.mu;
        let clamp = |z: f64, d: f64| z.clamp(mu / (KAPPA_SIGMA * d), KAPPA_SIGMA * mu / d);
        for j in 0..self.n {
            if self.has_lo[j] {
                it.zl[j] = clamp(it.zl[j], it.y[j] - self.lo[j]);
            }
            if self.has_hi[j] {
                it.zu[j] = clamp(it.zu[j], self.hi[j] - it.y[j]);
            }
        }
        for r in 0..self.m {
            if self.ineq[r] {
                it.zs[r] = clamp(it.zs[r], it.s[r]);
            }
        }
    }

    fn push_inside(&self, y: &mut [f64], push: f64) {
        for j in 0..self.n {
            let (l, u) = (self.lo[j], self.hi[j]);
            match (self.has_lo[j], self.has_hi[j]) {
                (true, true) => {
                    let pl = (push * l.abs().max(1.0)).min(push * (u - l));
                    let pu = (push * u.abs().max(1.0)).min(push * (u - l));
                    y[j] = if l + pl >= u - pu {
                        0.5 * (l + u)
                    } else {
                        y[j].clamp(l + pl, u - pu)
                    };
                }
                (true, false) => y[j] = y[j].max(l + push * l.abs().max(1.0)),
                (false, true) => y[j] = y[j].min(u - push * u.abs().max(1.0)),
                (false, false) => {}
            }
        }
    }

    /// Least-squares estimate of the constraint multipliers.
    fn least_squares_multipliers(&mut self, it: &Iterate, g: &[f64], jac: &[f64]) -> Option<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        if m == 0 {
            return Some(Vec::new());
        }
        let nh = self.kkt.nh;
        self.kkt.values[..nh].iter_mut().for_each(|v| *v = 0.0);
        self.kkt.values[nh..].copy_from_slice(jac);
        for j in 0..n {
            self.kkt.shift[j] = 1.0;
        }
        for r in 0..m {
            self.kkt.shift[n + r] = if self.ineq[r] { -1.0 } else { -1e-8 };
        }
        let inertia = self.kkt.ldl.factor(&self.kkt.values, &self.kkt.shift);
        if inertia.zero > 0 || inertia.negative != m {
            return None;
        }
        let mut rhs = vec![0.0; n + m];
        for j in 0..n {
            rhs[j] = -(g[j] - it.zl[j] + it.zu[j]);
        }
        for r in 0..m {
            if self.ineq[r] {
                rhs[n + r] = -it.zs[r];
            }
        }
        let sol = self.solve_factored(&rhs);
        let lam = sol[n..].to_vec();
        if lam.iter().all(|v| v.is_finite() && v.abs() <= LAMBDA_MAX) {
            Some(lam)
        } else {
            None
        }
    }

    fn run(mut self, initial: &[f64], duals: Option<&Duals>, log: &mut dyn FnMut(&IterationRecord)) -> SolveResult {
        let (n, m) = (self.n, self.m);
        let sf = self.prob.objective_factor();
        let sxv = self.prob.to_scaled(&vec![1.0; n]);
        let sc = self.prob.constraint_scale().to_vec();
        let warm = duals.is_some();
        self.mu = if warm {
            self.opts.barrier_init_warm
        } else {
            self.opts.barrier_init
        };
        let push = if warm {
            self.opts.bound_push_warm
        } else {
            self.opts.bound_push
        };
        let mut y = self.prob.to_scaled(initial);
        self.push_inside(&mut y, push);

        let ev = match self.eval(&y) {
            Ok(ev) => ev,
            Err(e) => return self.failure_result(initial, Status::NumericFailure, format!("at the initial point: {e}")),
        };
        let (mut g, mut jac) = match self.derivatives(&y) {
            Ok(d) => d,
            Err(e) => return self.failure_result(initial, Status::NumericFailure, format!("at the initial point: {e}")),
        };
        let s: Vec<f64> = (0..m)
            .map(|r| if self.ineq[r] { (-ev.c[r]).max(push) } else { 0.0 })
            .collect();
        let mut it = Iterate {
            y,
            s,
            lam: vec![0.0; m],
            zl: vec![0.0; n],
            zu: vec![0.0; n],
            zs: vec![0.0; m],
        };
        let mu = self.mu;
        if let Some(d) = duals {
            // sxv holds 1/sx
            for r in 0..m {
                it.lam[r] = d.constraints[r] * sf / sc[r];
                if self.ineq[r] {
                    it.lam[r] = it.lam[r].max(0.0);
                    it.zs[r] = it.lam[r].max(mu / it.s[r]);
                }
            }
            for j in 0..n {
                if self.has_lo[j] {
                    it.zl[j] = (d.lower[j] * sf / sxv[j]).max(mu / (it.y[j] - self.lo[j]));
                }
                if self.has_hi[j] {
                    it.zu[j] = (d.upper[j] * sf / sxv[j]).max(mu / (self.hi[j] - it.y[j]));
                }
            }
        } else {
            for j in 0..n {
                if self.has_lo[j] {
                    it.zl[j] = 1.0;
                }
                if self.has_hi[j] {
                    it.zu[j] = 1.0;
                }
            }
            for r in 0..m {
                if self.ineq[r] {
                    it.zs[r] = 1.0;
                }
            }
            if let Some(lam) = self.least_squares_multipliers(&it, &g, &jac) {
                it.lam = lam;
            }
        }

        let mut ev = ev;
        let theta0 = self.theta(&ev.c, &it.s);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);

        let mut best: Option<(f64, f64, Iterate, f64)> = None;
        let mut iter = 0usize;
        let mut status = Status::MaxIter;
        let mut message = String::from("iteration limit reached");
        let tol = self.opts.tolerance_kkt;
        let tol_c = self.opts.tolerance_constraint;
        let mu_min = tol / 10.0;
        loop {
            let (dual, compl, primal) = self.errors(&it, &g, &jac, &ev, 0.0);
            let kkt = dual.max(compl);
            let viol = constraint_violation(&self.kinds, &ev.c);
            let record = IterationRecord {
                iteration: iter,
                objective: ev.f / sf,
                feasibility: viol,
                penalty: self.mu,
            };
            if self.opts.verbosity >= 1 {
                log::info!("{record}");
            }
            log(&record);
            let better = match &best {
                None => true,
                Some((bk, bv, _, _)) => rank(kkt, viol, tol_c) <= rank(*bk, *bv, tol_c),
            };
            if better {
                best = Some((kkt, viol, it.clone(), primal));
            }
            if kkt <= tol && primal <= tol_c {
                status = Status::Converged;
                message = String::from("optimal point found");
                break;
            }
            if iter >= self.opts.max_iterations {
                break;
            }

            // barrier update
            loop {
                let (d, c, p) = self.errors(&it, &g, &jac, &ev, self.mu);
                let e_mu = d.max(c).max(p);
                if self.mu > mu_min && e_mu <= KAPPA_EPS * self.mu {
                    self.mu = mu_min.max((KAPPA_MU * self.mu).min(self.mu.powf(THETA_MU)));
                    self.reset_filter();
                } else {
                    break;
                }
            }
            iter += 1;

            let lam_for_h = it.lam.clone();
            let lag_g0 = self.lagrangian_gradient(&g, &jac, &lam_for_h);
            let hvals = {
                let prob = &self.prob;
                let rows = &self.rows;
                let cols = &self.cols;
                let nnz = rows.len();
                let res = self.hess.evaluate(&it.y, &lag_g0, |yp, out| {
                    prob.gradient(yp, out)?;
                    let mut jv = vec![0.0; nnz];
                    prob.jacobian_values(yp, &mut jv)?;
                    for k in 0..nnz {
                        out[cols[k]] += lam_for_h[rows[k]] * jv[k];
                    }
                    Ok(())
                });
                match res {
                    Ok(h) if h.iter().all(|v| v.is_finite()) => h,
                    Ok(_) => {
                        status = Status::NumericFailure;
                        message = String::from("non-finite Hessian estimate");
                        break;
                    }
                    Err(e) => {
                        status = Status::NumericFailure;
                        message = format!("during Hessian estimation: {e}");
                        break;
                    }
                }
            };
            let sx = self.sigma_x(&it);
            let ss = self.sigma_s(&it);
            if let Err(Failure::Numeric(msg)) | Err(Failure::Infeasible(msg)) = self.factor(&hvals, &jac, &sx, &ss) {
                status = Status::NumericFailure;
                message = msg;
                break;
            }
            let (rx, rc, rs) = self.barrier_residuals(&it, &g, &jac, &ev.c);
            let mut st = self.step_from(&it, &rx, &rc, &rs, &ss);
            // Steps far larger than the variables come from linearizations
            // that only a huge move can satisfy. Damping both blocks of the KKT
            // matrix trades some linear feasibility for a shorter step.
            for _ in 0..12 {
                let ratio = st
                    .dx
                    .iter()
                    .zip(&it.y)
                    .fold(0.0f64, |a, (d, v)| a.max(d.abs() / v.abs().max(1.0)));
                if !(ratio > self.opts.max_step_ratio) || self.kkt.dw >= 1e4 {
                    break;
                }
                let mut dw = (self.kkt.dw * 10.0).max(1e-4);
                let dc = self.kkt.dc.max(dw);
                loop {
                    self.set_shift(&sx, &ss, dw, dc);
                    let inertia = self.kkt.ldl.factor(&self.kkt.values, &self.kkt.shift);
                    if (inertia.positive, inertia.negative) == (n, m) && inertia.zero == 0 {
                        break;
                    }
                    dw *= 10.0;
                }
                self.kkt.dw = dw;
                self.kkt.dc = dc;
                st = self.step_from(&it, &rx, &rc, &rs, &ss);
            }
            if st.dx.iter().chain(&st.dlam).any(|v| !v.is_finite()) {
                status = Status::NumericFailure;
                message = String::from("non-finite Newton step");
                break;
            }
            let tau = (1.0 - self.mu).max(0.99);
            let alpha_max = self.max_primal_step(&it, &st.dx, &st.ds, tau);
            let alpha_z = self.max_dual_step(&it, &st, tau);

            let lin = Linearization { rx: &rx, rc: &rc, rs: &rs, ss: &ss };
            match self.line_search(&it, &ev, &g, &st, &lin, alpha_max, tau) {
                Some((alpha, y_new, s_new, ev_new)) => {
                    let rel_step = st
                        .dx
                        .iter()
                        .zip(&it.y)
                        .fold(0.0f64, |a, (d, v)| a.max((alpha * d).abs() / (1.0 + v.abs())));
                    it.y = y_new;
                    it.s = s_new;
                    for r in 0..m {
                        it.lam[r] += alpha * st.dlam[r];
                        it.zs[r] += alpha_z * st.dzs[r];
                    }
                    for j in 0..n {
                        it.zl[j] += alpha_z * st.dzl[j];
                        it.zu[j] += alpha_z * st.dzu[j];
                    }
                    self.safeguard_duals(&mut it);
                    ev = ev_new;
                    if self.opts.verbosity >= 2 {
                        let (big, _) = st.dx.iter().enumerate().fold((0, 0.0f64), |a, (j, d)| if d.abs() > a.1 { (j, d.abs()) } else { a });
                        log::debug!(
                            "alpha {alpha:.3e} (max {alpha_max:.3e}, {}) alpha_z {alpha_z:.3e} dw {:.2e} step {rel_step:.2e} largest dx[{big}] = {:.3e}",
                            self.blocking(&it, &st.dx, &st.ds),
                            self.kkt.dw,
                            st.dx[big]
                        );
                    }
                }
                None => match self.restoration(&mut it, &ev, &jac) {
                    Ok(ev_new) => {
                        ev = ev_new;
                    }
                    Err(Failure::Infeasible(msg)) => {
                        status = Status::Infeasible;
                        message = msg;
                        break;
                    }
                    Err(Failure::Numeric(msg)) => {
                        status = Status::NumericFailure;
                        message = msg;
                        break;
                    }
                },
            }
            match self.derivatives(&it.y) {
                Ok((g2, j2)) => {
                    g = g2;
                    jac = j2;
                }
                Err(e) => {
                    status = Status::NumericFailure;
                    message = e.to_string();
                    break;
                }
            }
        }

        let best_it = match (status, best) {
            (Status::Converged, _) | (_, None) => it,
            (_, Some((_, _, b, _))) => b,
        };
        self.finish(best_it, status, message, iter, sf, &sxv, &sc)
    }

    fn line_search(
        &mut self,
        it: &Iterate,
        ev: &Evals,
        g: &[f64],
        st: &Step,
        lin: &Linearization,
        alpha_max: f64,
        tau: f64,
    ) -> Option<(f64, Vec<f64>, Vec<f64>, Evals)> {
        let theta = self.theta(&ev.c, &it.s);
        let phi = self.barrier(ev.f, &it.y, &it.s);
        let slope = self.barrier_slope(g, it, &st.dx, &st.ds);
        let alpha_min = if slope < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * theta / -slope)
                    .min(DELTA * theta.powf(S_THETA) / (-slope).powf(S_PHI))
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };
        let mut alpha = alpha_max;
        let mut first = true;
        loop {
            let (y, s) = self.trial(it, &st.dx, &st.ds, alpha);
            let accepted = match self.eval(&y) {
                Ok(ev_t) => {
                    let theta_t = self.theta(&ev_t.c, &s);
                    let phi_t = self.barrier(ev_t.f, &y, &s);
                    match self.acceptance(theta, phi, slope, alpha, theta_t, phi_t) {
                        Some(f_type) => Some((f_type, ev_t, theta_t)),
                        None => {
                            if first && theta_t >= theta {
                                let merit = (theta, phi, slope);
                                if let Some(found) =
                                    self.second_order_correction(it, lin, alpha, tau, merit, &ev_t, &s)
                                {
                                    return Some(found);
                                }
                            }
                            None
                        }
                    }
                }
                Err(_) => None,
            };
            if let Some((f_type, ev_t, _)) = accepted {
                if !f_type {
                    self.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                }
                return Some((alpha, y, s, ev_t));
            }
            first = false;
            alpha *= 0.5;
            if alpha < alpha_min {
                return None;
            }
        }
    }

    /// `Some(true)` for an objective-decrease step, `Some(false)` for a
    /// feasibility step, `None` if rejected.
    fn acceptance(&self, theta: f64, phi: f64, slope: f64, alpha: f64, theta_t: f64, phi_t: f64) -> Option<bool> {
        if !phi_t.is_finite() || !self.filter_acceptable(theta_t, phi_t) {
            return None;
        }
        let switching = slope < 0.0 && alpha * (-slope).powf(S_PHI) > DELTA * theta.powf(S_THETA);
        if theta <= self.theta_min && switching {
            if phi_t <= phi + ETA_PHI * alpha * slope {
                return Some(true);
            }
            return None;
        }
        if theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi - GAMMA_PHI * theta {
            Some(false)
        } else {
            None
        }
    }

    /// Retries a rejected full step with the constraint residual of the trial
    /// point folded into the right-hand side.
    fn second_order_correction(
        &mut self,
        it: &Iterate,
        lin: &Linearization,
        alpha: f64,
        tau: f64,
        (theta, phi, slope): (f64, f64, f64),
        ev_trial: &Evals,
        s_trial: &[f64],
    ) -> Option<(f64, Vec<f64>, Vec<f64>, Evals)> {
        let mut c_soc: Vec<f64> = (0..self.m)
            .map(|r| {
                let ct = if self.ineq[r] { ev_trial.c[r] + s_trial[r] } else { ev_trial.c[r] };
                alpha * lin.rc[r] + ct
            })
            .collect();
        let mut theta_old = self.theta(&ev_trial.c, s_trial);
        for _ in 0..MAX_SOC {
            let soc = self.step_from(it, lin.rx, &c_soc, lin.rs, lin.ss);
            let a = self.max_primal_step(it, &soc.dx, &soc.ds, tau);
            let (y, s) = self.trial(it, &soc.dx, &soc.ds, a);
            let ev_t = self.eval(&y).ok()?;
            let theta_t = self.theta(&ev_t.c, &s);
            let phi_t = self.barrier(ev_t.f, &y, &s);
            if let Some(f_type) = self.acceptance(theta, phi, slope, alpha, theta_t, phi_t) {
                if !f_type {
                    self.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                }
                return Some((a, y, s, ev_t));
            }
            if theta_t > KAPPA_SOC * theta_old {
                return None;
            }
            theta_old = theta_t;
            for r in 0..self.m {
                let ct = if self.ineq[r] { ev_t.c[r] + s[r] } else { ev_t.c[r] };
                c_soc[r] = a * c_soc[r] + ct;
            }
        }
        None
    }

    /// Reduces infeasibility with Levenberg-Marquardt steps on the squared
    /// constraint violation until the point is acceptable to the filter again.
    fn restoration(&mut self, it: &mut Iterate, ev: &Evals, jac: &[f64]) -> Result<Evals, Failure> {
        let theta_start = self.theta(&ev.c, &it.s);
        let phi_start = self.barrier(ev.f, &it.y, &it.s);
        self.filter
            .push(((1.0 - GAMMA_THETA) * theta_start, phi_start - GAMMA_PHI * theta_start));
        let mut ev = ev.clone();
        let mut jac = jac.to_vec();
        let (n, m) = (self.n, self.m);
        let mut nu = self.mu.sqrt().max(1e-6);
        let tol_c = self.opts.tolerance_constraint;
        let nh = self.kkt.nh;
        for k in 0..RESTORATION_MAX {
            let theta = self.theta(&ev.c, &it.s);
            let phi = self.barrier(ev.f, &it.y, &it.s);
            if k > 0 && theta <= 0.9 * theta_start && self.filter_acceptable(theta, phi) {
                return Ok(ev);
            }
            if k > 0 && self.primal_inf(&ev.c, &it.s) <= 0.1 * tol_c && self.filter_acceptable(theta, phi) {
                return Ok(ev);
            }
            let sq = self.theta_sq(&ev.c, &it.s);
            let sx: Vec<f64> = self.sigma_x(it).iter().map(|v| v + nu).collect();
            let ss = self.sigma_s(it);
            self.kkt.values[..nh].iter_mut().for_each(|v| *v = 0.0);
            self.kkt.values[nh..].copy_from_slice(&jac);
            self.kkt.dw = 0.0;
            self.kkt.dc = 1.0;
            self.set_shift(&sx, &ss, 0.0, 1.0);
            let inertia = self.kkt.ldl.factor(&self.kkt.values, &self.kkt.shift);
            if (inertia.positive, inertia.negative) != (n, m) {
                return Err(Failure::Numeric(format!("restoration system has inertia {inertia:?}")));
            }
            let rc: Vec<f64> = (0..m)
                .map(|r| if self.ineq[r] { ev.c[r] + it.s[r] } else { ev.c[r] })
                .collect();
            let zeros_n = vec![0.0; n];
            let zeros_m = vec![0.0; m];
            let st = self.step_from(it, &zeros_n, &rc, &zeros_m, &ss);
            let tau = (1.0 - self.mu).max(0.99);
            let alpha_max = self.max_primal_step(it, &st.dx, &st.ds, tau);
            // change of the residual predicted by the linearization
            let mut dlin: Vec<f64> = (0..m).map(|r| if self.ineq[r] { st.ds[r] } else { 0.0 }).collect();
            for q in 0..jac.len() {
                dlin[self.rows[q]] += jac[q] * st.dx[self.cols[q]];
            }
            let mut alpha = alpha_max;
            let mut accepted = None;
            while alpha > 1e-12 {
                let (y, s) = self.trial(it, &st.dx, &st.ds, alpha);
                let pred = sq - rc.iter().zip(&dlin).map(|(a, b)| (a + alpha * b).powi(2)).sum::<f64>();
                if let Ok(ev_t) = self.eval(&y) {
                    if pred > 0.0 && sq - self.theta_sq(&ev_t.c, &s) >= 1e-4 * pred {
                        accepted = Some((y, s, ev_t));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if self.opts.verbosity >= 2 {
                log::debug!(
                    "restoration {k}: theta {theta:.3e} nu {nu:.2e} alpha {alpha:.3e} (max {alpha_max:.3e}, {})",
                    self.blocking(it, &st.dx, &st.ds),
                );
            }
            let Some((y, s, ev_t)) = accepted else {
                if nu < 1e10 {
                    nu *= 100.0;
                    continue;
                }
                if self.opts.verbosity >= 2 {
                    let mut rows: Vec<(usize, f64)> = rc.iter().cloned().enumerate().collect();
                    rows.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
                    for &(r, v) in rows.iter().take(8) {
                        log::debug!("stalled row {r} ineq {} residual {v:.3e} slack {:.3e}", self.ineq[r], it.s[r]);
                    }
                }
                return Err(Failure::Infeasible(format!(
                    "restoration stalled at constraint violation {:.3e}",
                    self.primal_inf(&ev.c, &it.s)
                )));
            };
            if alpha >= 0.5 * alpha_max {
                nu = (nu / 3.0).max(1e-8);
            } else {
                nu *= 10.0;
            }
            it.y = y;
            it.s = s;
            ev = ev_t;
            self.safeguard_duals(it);
            jac = match self.derivatives(&it.y) {
                Ok((_, j)) => j,
                Err(e) => return Err(Failure::Numeric(e.to_string())),
            };
        }
        Err(Failure::Infeasible(String::from("restoration iteration limit reached")))
    }

    fn failure_result(&self, initial: &[f64], status: Status, message: String) -> SolveResult {
        SolveResult {
            status,
            point: initial.to_vec(),
            objective_value: f64::NAN,
            max_constraint_violation: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            wall_time: Default::default(),
            duals: Duals {
                constraints: vec![0.0; self.m],
                lower: vec![0.0; self.n],
                upper: vec![0.0; self.n],
            },
            message,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(&self, it: Iterate, mut status: Status, message: String, iterations: usize, sf: f64, inv_sx: &[f64], sc: &[f64]) -> SolveResult {
        let (n, m) = (self.n, self.m);
        let lo = self.orig.lower_bounds();
        let hi = self.orig.upper_bounds();
        let mut x = self.prob.to_unscaled(&it.y);
        for j in 0..n {
            x[j] = x[j].clamp(lo[j], hi[j]);
        }
        let y = self.prob.to_scaled(&x);
        let (objective_value, viol, kkt) = match (self.eval(&y), self.derivatives(&y)) {
            (Ok(ev), Ok((g, jac))) => {
                let (d, c, _) = self.errors(&it, &g, &jac, &ev, 0.0);
                (ev.f / sf, constraint_violation(&self.kinds, &ev.c), d.max(c))
            }
            _ => {
                status = Status::NumericFailure;
                (f64::NAN, f64::INFINITY, f64::INFINITY)
            }
        };
        if status == Status::Converged && (viol > self.opts.tolerance_constraint || kkt > self.opts.tolerance_kkt) {
            status = Status::MaxIter;
        }
        let constraints = (0..m).map(|r| it.lam[r] * sc[r] / sf).collect();
        let lower = (0..n).map(|j| it.zl[j] * inv_sx[j] / sf).collect();
        let upper = (0..n).map(|j| it.zu[j] * inv_sx[j] / sf).collect();
        SolveResult {
            status,
            point: x,
            objective_value,
            max_constraint_violation: viol,
            kkt_residual: kkt,
            iterations,
            wall_time: Default::default(),
            duals: Duals {
                constraints,
                lower,
                upper,
            },
            message,
        }
    }
}

/// Lexicographic quality of an iterate: feasible points rank by optimality
/// error, infeasible ones by violation behind all feasible ones.
fn rank(kkt: f64, viol: f64, tol_c: f64) -> (u8, f64) {
    if viol <= tol_c {
        (0, kkt)
    } else {
        (1, viol)
    }
}

/// Elimination order for the KKT matrix: primal columns in index order, each
/// constraint row right after the last of its columns, high-degree columns
/// and the rows that touch only them at the end.
fn kkt_order(n: usize, m: usize, hess: &[(usize, usize)], rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let mut degree = vec![0usize; n];
    for &(i, j) in hess {
        if i != j {
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    for &c in cols {
        degree[c] += 1;
    }
    let threshold = ((n + m) / 8).max(40);
    let dense: Vec<bool> = degree.iter().map(|&d| d > threshold).collect();
    let mut key: Vec<Option<usize>> = vec![None; m];
    for (&r, &c) in rows.iter().zip(cols) {
        if !dense[c] {
            key[r] = Some(key[r].map_or(c, |k: usize| k.max(c)));
        }
    }
    let mut rows_at: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tail_rows = Vec::new();
    for r in 0..m {
        match key[r] {
            Some(c) => rows_at[c].push(r),
            None => tail_rows.push(r),
        }
    }
    let mut order = Vec::with_capacity(n + m);
    for j in 0..n {
        if !dense[j] {
            order.push(j);
            order.extend(rows_at[j].iter().map(|r| n + r));
        }
    }
    order.extend((0..n).filter(|&j| dense[j]));
    order.extend(tail_rows.iter().map(|r| n + r));
    order
}
