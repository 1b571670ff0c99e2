//! The problem interface every solver in this crate consumes.

use thiserror::Error;

/// Kind of a general constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `c(x) = 0`
    Equality,
    /// `c(x) <= 0`
    Inequality,
}

/// Failure while evaluating problem functions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("non-finite objective value")]
    NonFiniteObjective,
    #[error("non-finite gradient entry for variable {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite value in constraint row {0}")]
    NonFiniteConstraint(usize),
    #[error("non-finite jacobian entry in constraint row {row}, column {col}")]
    NonFiniteJacobian { row: usize, col: usize },
    #[error("evaluation outside the model domain: {0}")]
    Domain(String),
}

/// Coordinate-form sparsity pattern of the constraint jacobian.
///
/// `constant[k]` marks entries whose value does not depend on `x`; those
/// entries contribute nothing to second derivatives.
#[derive(Debug, Clone, Default)]
pub struct SparsityPattern {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub constant: Vec<bool>,
}

impl SparsityPattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: usize, col: usize, constant: bool) {
        self.rows.push(row);
        self.cols.push(col);
        self.constant.push(constant);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense pattern of an `m x n` jacobian with all entries variable.
    pub fn dense(m: usize, n: usize) -> Self {
        let mut p = Self::new();
        for r in 0..m {
            for c in 0..n {
                p.push(r, c, false);
            }
        }
        p
    }
}

/// A smooth nonlinear program
///
/// ```text
/// minimize f(x)  subject to  c_E(x) = 0,  c_I(x) <= 0,  lower <= x <= upper
/// ```
///
/// Infinite bounds are expressed with `f64::INFINITY`/`f64::NEG_INFINITY`.
pub trait Problem {
    fn num_variables(&self) -> usize;

    fn constraint_kinds(&self) -> &[ConstraintKind];

    fn num_constraints(&self) -> usize {
        self.constraint_kinds().len()
    }

    fn lower_bounds(&self) -> &[f64];

    fn upper_bounds(&self) -> &[f64];

    fn objective(&self, x: &[f64]) -> Result<f64, EvalError>;

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<(), EvalError>;

    fn constraints(&self, x: &[f64], values: &mut [f64]) -> Result<(), EvalError>;

    fn jacobian_pattern(&self) -> &SparsityPattern;

    /// Values in the order of [`Problem::jacobian_pattern`].
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) -> Result<(), EvalError>;

    /// Variables on which the objective depends nonlinearly. `None` means
    /// every variable may couple with every other one.
    fn objective_nonlinear_variables(&self) -> Option<Vec<usize>> {
        None
    }

    /// Typical magnitude of each variable; the solvers iterate on `x / scale`.
    fn variable_scales(&self) -> Option<Vec<f64>> {
        None
    }

    /// Multiplier applied to each constraint row before it is measured.
    fn constraint_scales(&self) -> Option<Vec<f64>> {
        None
    }

    fn objective_scale(&self) -> f64 {
        1.0
    }
}

pub(crate) fn check_finite_vector(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}
