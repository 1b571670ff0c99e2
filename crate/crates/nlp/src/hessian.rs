//! Hessian of the Lagrangian by finite differences of its exact gradient.
//!
//! The sparsity of the Hessian is inferred from the jacobian pattern: every
//! pair of columns sharing a row through non-constant entries may couple.
//! Columns are grouped so that, outside a few dense rows, no two columns of a
//! group touch the same row; each group costs one gradient evaluation.

use crate::problem::{EvalError, Problem};

pub(crate) struct HessianApprox {
    n: usize,
    /// lower-triangle entries (i >= j), sorted, unique; includes every diagonal
    pub entries: Vec<(usize, usize)>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    dense: Vec<bool>,
}

impl HessianApprox {
    pub fn new(problem: &dyn Problem) -> Self {
        let n = problem.num_variables();
        let m = problem.num_constraints();
        let pat = problem.jacobian_pattern();
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for k in 0..pat.len() {
            if !pat.constant[k] {
                row_cols[pat.rows[k]].push(pat.cols[k]);
            }
        }
        let mut pairs: Vec<(usize, usize)> = (0..n).map(|j| (j, j)).collect();
        for cols in row_cols.iter_mut() {
            cols.sort_unstable();
            cols.dedup();
            for (a, &ca) in cols.iter().enumerate() {
                for &cb in &cols[..=a] {
                    pairs.push((ca, cb));
                }
            }
        }
        let obj_vars = problem
            .objective_nonlinear_variables()
            .unwrap_or_else(|| (0..n).collect());
        let mut obj_vars = obj_vars;
        obj_vars.sort_unstable();
        obj_vars.dedup();
        for (a, &ca) in obj_vars.iter().enumerate() {
            for &cb in &obj_vars[..=a] {
                pairs.push((ca, cb));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &pairs {
            nbrs[j].push(i);
            if i != j {
                nbrs[i].push(j);
            }
        }
        let threshold = (n / 8).max(40);
        let dense: Vec<bool> = nbrs.iter().map(|v| v.len() > threshold).collect();

        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = vec![usize::MAX; n];
        let mut row_groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut singleton: Vec<bool> = Vec::new();
        for j in 0..n {
            if dense[j] {
                group_of[j] = groups.len();
                groups.push(vec![j]);
                singleton.push(true);
                continue;
            }
            let chosen = (0..groups.len()).find(|&g| {
                !singleton[g]
                    && nbrs[j]
                        .iter()
                        .filter(|&&i| !dense[i])
                        .all(|&i| !row_groups[i].contains(&g))
            });
            let g = match chosen {
                Some(g) => g,
                None => {
                    groups.push(Vec::new());
                    singleton.push(false);
                    groups.len() - 1
                }
            };
            groups[g].push(j);
            group_of[j] = g;
            for &i in &nbrs[j] {
                if !dense[i] {
                    row_groups[i].push(g);
                }
            }
        }
        Self {
            n,
            entries: pairs,
            groups,
            group_of,
            dense,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Hessian values in the order of `entries`. `grad` evaluates the
    /// Lagrangian gradient at a point; `g0` is its value at `y`.
    pub fn evaluate(
        &self,
        y: &[f64],
        g0: &[f64],
        mut grad: impl FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
    ) -> Result<Vec<f64>, EvalError> {
        let n = self.n;
        let step: Vec<f64> = y
            .iter()
            .map(|v| f64::EPSILON.sqrt() * v.abs().max(1.0))
            .collect();
        let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(self.groups.len());
        let mut yp = y.to_vec();
        let mut gp = vec![0.0; n];
        for group in &self.groups {
            // a forward probe can leave the model domain near its edge
            let mut sign = 1.0;
            let mut result = Ok(());
            for attempt in [1.0, -1.0] {
                sign = attempt;
                for &j in group {
                    yp[j] = y[j] + sign * step[j];
                }
                result = grad(&yp, &mut gp);
                if result.is_ok() {
                    break;
                }
            }
            for &j in group {
                yp[j] = y[j];
            }
            result?;
            diffs.push(gp.iter().zip(g0).map(|(a, b)| sign * (a - b)).collect());
        }
        let single = |j: usize| self.groups[self.group_of[j]].len() == 1;
        let values = self
            .entries
            .iter()
            .map(|&(i, j)| {
                let mut sum = 0.0;
                let mut count = 0.0;
                if !self.dense[i] || single(j) {
                    sum += diffs[self.group_of[j]][i] / step[j];
                    count += 1.0;
                }
                if i != j && (!self.dense[j] || single(i)) {
                    sum += diffs[self.group_of[i]][j] / step[i];
                    count += 1.0;
                }
                if count > 0.0 {
                    sum / count
                } else {
                    0.0
                }
            })
            .collect();
        Ok(values)
    }
}
