//! Convex quadratic programs with an optional single convex quadratic inequality.
//!
//! The polyhedral part (equalities and variable bounds) is handled by an ADMM splitting with
//! Ruiz equilibration and active-set polishing; the quadratic inequality is dualised and its
//! multiplier located by a safeguarded bracketing search, exploiting that the constraint value
//! at the minimiser is non-increasing in the multiplier.
//!
//! ```
//! use sscp_qcqp::{solve, CsrMatrix, Qcqp, SolverOptions, Status};
//!
//! // min ‖u‖²  s.t.  u = 3
//! let mut p = Qcqp::new(1);
//! p.hessian = CsrMatrix::diagonal(&[2.0]);
//! p.eq_matrix = CsrMatrix::identity(1);
//! p.eq_rhs = vec![3.0];
//! let sol = solve(&p, &SolverOptions::default(), None).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.x[0] - 3.0).abs() < 1e-8);
//! assert!((sol.objective - 9.0).abs() < 1e-7);
//! ```

mod admm;
pub mod kkt;
pub mod ldl;
#[cfg(feature = "dense-oracle")]
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod sparse;

pub use kkt::{kkt_residual, KktCandidate, KktReport};
pub use problem::{check_psd, ProblemError, QuadraticConstraint, Qcqp};
pub use solver::{solve, Solution, SolverOptions, Status, WarmStart};
pub use sparse::CsrMatrix;
