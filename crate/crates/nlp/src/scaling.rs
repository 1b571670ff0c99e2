use crate::problem::{ConstraintKind, EvalError, Problem, SparsityPattern};

/// View of a problem in scaled coordinates `y = x / sx`, with constraint
/// rows multiplied by `sc` and the objective by `sf`.
pub(crate) struct Scaled<'a> {
    inner: &'a dyn Problem,
    sx: Vec<f64>,
    sc: Vec<f64>,
    sf: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x_buf: std::cell::RefCell<Vec<f64>>,
}

impl<'a> Scaled<'a> {
    pub fn new(inner: &'a dyn Problem) -> Self {
        let n = inner.num_variables();
        let m = inner.num_constraints();
        let sx = inner
            .variable_scales()
            .filter(|s| s.len() == n && s.iter().all(|v| v.is_finite() && *v > 0.0))
            .unwrap_or_else(|| vec![1.0; n]);
        let sc = inner
            .constraint_scales()
            .filter(|s| s.len() == m && s.iter().all(|v| v.is_finite() && *v > 0.0))
            .unwrap_or_else(|| vec![1.0; m]);
        let sf = {
            let s = inner.objective_scale();
            if s.is_finite() && s > 0.0 {
                s
            } else {
                1.0
            }
        };
        let lower = inner
            .lower_bounds()
            .iter()
            .zip(&sx)
            .map(|(b, s)| b / s)
            .collect();
        let upper = inner
            .upper_bounds()
            .iter()
            .zip(&sx)
            .map(|(b, s)| b / s)
            .collect();
        Self {
            inner,
            sx,
            sc,
            sf,
            lower,
            upper,
            x_buf: std::cell::RefCell::new(vec![0.0; n]),
        }
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.sx).map(|(v, s)| v / s).collect()
    }

    pub fn to_unscaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.sx).map(|(v, s)| v * s).collect()
    }

    pub fn constraint_scale(&self) -> &[f64] {
        &self.sc
    }

    pub fn objective_factor(&self) -> f64 {
        self.sf
    }

    fn with_unscaled<R>(&self, y: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let mut buf = self.x_buf.borrow_mut();
        for ((b, v), s) in buf.iter_mut().zip(y).zip(&self.sx) {
            *b = v * s;
        }
        f(&buf)
    }
}

impl Problem for Scaled<'_> {
    fn num_variables(&self) -> usize {
        self.inner.num_variables()
    }

    fn constraint_kinds(&self) -> &[ConstraintKind] {
        self.inner.constraint_kinds()
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, y: &[f64]) -> Result<f64, EvalError> {
        self.with_unscaled(y, |x| self.inner.objective(x))
            .map(|f| f * self.sf)
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) -> Result<(), EvalError> {
        self.with_unscaled(y, |x| self.inner.gradient(x, grad))?;
        for (g, s) in grad.iter_mut().zip(&self.sx) {
            *g *= s * self.sf;
        }
        Ok(())
    }

    fn constraints(&self, y: &[f64], values: &mut [f64]) -> Result<(), EvalError> {
        self.with_unscaled(y, |x| self.inner.constraints(x, values))?;
        for (c, s) in values.iter_mut().zip(&self.sc) {
            *c *= s;
        }
        Ok(())
    }

    fn jacobian_pattern(&self) -> &SparsityPattern {
        self.inner.jacobian_pattern()
    }

    fn jacobian_values(&self, y: &[f64], values: &mut [f64]) -> Result<(), EvalError> {
        self.with_unscaled(y, |x| self.inner.jacobian_values(x, values))?;
        let pat = self.inner.jacobian_pattern();
        for (k, v) in values.iter_mut().enumerate() {
            *v *= self.sc[pat.rows[k]] * self.sx[pat.cols[k]];
        }
        Ok(())
    }

    fn objective_nonlinear_variables(&self) -> Option<Vec<usize>> {
        self.inner.objective_nonlinear_variables()
    }
}
