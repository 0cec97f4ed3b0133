//! Sequential convex programming for stochastic optimal control with control-affine drift and
//! uncontrolled diffusion.
//!
//! Each outer iteration linearises the dynamics about the current mean trajectory, replaces the
//! linearised SDE by forward-Euler mean and covariance recursions, and solves the resulting
//! convex program under a shrinking trust region. Candidate controls are validated by
//! Euler–Maruyama simulation of the original SDE.
//!
//! ```no_run
//! use sscp::config::{build_car_benchmark, BenchmarkConfig};
//! use sscp::scp::{initial_guess, run, ScpOptions};
//!
//! let cfg = BenchmarkConfig::default();
//! let inst = build_car_benchmark(&cfg).unwrap();
//! let grid = cfg.grid().unwrap();
//! let result = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
//! println!("converged: {} after {} iterations", result.converged, result.iterations);
//! ```

pub mod cli;
pub mod config;
pub mod linearize;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod output;
pub mod pmp;
pub mod scp;
pub mod subproblem;

pub use sscp_qcqp as qcqp;
