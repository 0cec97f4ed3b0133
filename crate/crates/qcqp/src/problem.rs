use std::sync::Arc;

use thiserror::Error;

use crate::ldl::{EnvelopeMatrix, Symbolic};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bound {index} has lower {lower} > upper {upper}")]
    EmptyBox { index: usize, lower: f64, upper: f64 },
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} is not positive semidefinite")]
    NotConvex(&'static str),
}

/// Convex quadratic inequality `½ xᵀ Q x + cᵀ x + r ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub hessian: CsrMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl QuadraticConstraint {
    pub fn eval(&self, x: &[f64]) -> f64 {
        0.5 * self.hessian.quad_form(x) + dot(&self.linear, x) + self.constant
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.mul_vec(x);
        g.iter_mut().zip(&self.linear).for_each(|(g, c)| *g += c);
        g
    }
}

/// `min ½ xᵀ P x + qᵀ x + c₀` subject to `A x = b`, `lower ≤ x ≤ upper` and at most one
/// convex quadratic inequality. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Qcqp {
    pub hessian: CsrMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq_matrix: CsrMatrix,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub quadratic: Option<QuadraticConstraint>,
}

impl Qcqp {
    /// Unconstrained problem in `n` variables with zero data.
    pub fn new(n: usize) -> Self {
        Self {
            hessian: CsrMatrix::zeros(n, n),
            linear: vec![0.0; n],
            constant: 0.0,
            eq_matrix: CsrMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            quadratic: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.hessian.quad_form(x) + dot(&self.linear, x) + self.constant
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.dim();
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(ProblemError::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("hessian rows", n, self.hessian.nrows())?;
        check("hessian cols", n, self.hessian.ncols())?;
        check("equality columns", n, self.eq_matrix.ncols())?;
        check("equality rows", self.eq_rhs.len(), self.eq_matrix.nrows())?;
        check("lower bounds", n, self.lower.len())?;
        check("upper bounds", n, self.upper.len())?;
        if let Some(qc) = &self.quadratic {
            check("quadratic constraint rows", n, qc.hessian.nrows())?;
            check("quadratic constraint cols", n, qc.hessian.ncols())?;
            check("quadratic constraint linear term", n, qc.linear.len())?;
            if !qc.constant.is_finite() || qc.linear.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite("quadratic constraint"));
            }
        }
        if self.linear.iter().any(|v| !v.is_finite()) || !self.constant.is_finite() {
            return Err(ProblemError::NonFinite("objective"));
        }
        if self.eq_rhs.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite("equality right-hand side"));
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(ProblemError::EmptyBox {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }

    /// Symmetry and positive-semidefiniteness of the objective and constraint Hessians.
    pub fn audit_convexity(&self) -> Result<(), ProblemError> {
        self.validate()?;
        check_psd(&self.hessian, "objective hessian")?;
        if let Some(qc) = &self.quadratic {
            check_psd(&qc.hessian, "quadratic constraint hessian")?;
        }
        Ok(())
    }
}

/// PSD test by factoring `M + εI` with `ε` a small multiple of the largest entry.
pub fn check_psd(m: &CsrMatrix, what: &'static str) -> Result<(), ProblemError> {
    let scale = 1.0 + m.max_abs();
    if m.asymmetry() > 1e-12 * scale {
        return Err(ProblemError::NotSymmetric(what));
    }
    let n = m.nrows();
    let edges: Vec<_> = m
        .triplets()
        .into_iter()
        .filter(|&(r, c, _)| c < r)
        .map(|(r, c, _)| (r, c))
        .collect();
    let sym = Arc::new(Symbolic::new(n, &edges));
    let mut env = EnvelopeMatrix::zeros(sym);
    for (r, c, v) in m.triplets() {
        if c < r {
            env.add(r, c, v);
        } else if c == r {
            env.add_diagonal(r, v);
        }
    }
    for i in 0..n {
        env.add_diagonal(i, 1e-9 * scale);
    }
    match env.factor() {
        Ok(f) if f.inertia().1 == 0 => Ok(()),
        _ => Err(ProblemError::NotConvex(what)),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}
