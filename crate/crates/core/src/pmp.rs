//! Surrogate Pontryagin check on the deterministic mean system.
//!
//! The costate lives on the combined `(μ, z)` state. The stochastic multiplier process and
//! the covariance coupling are not modelled, so the residual certifies the mean system only.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linearize::{LinearizedCost, LtvCoefficients};
use crate::model::{OcpInstance, TimeGrid};
use crate::moments::Iterate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmpError {
    /// The control cost is not strictly convex in some component, so the Hamiltonian
    /// maximiser has no closed form.
    #[error("surrogate PMP residual unavailable: control weight {index} is {value}")]
    Unavailable { index: usize, value: f64 },
    #[error("expected {expected} terminal multipliers, got {got}")]
    Terminal { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    /// Costate on `(μ, z)` at every node.
    pub p: Vec<DVector<f64>>,
    /// Abnormal multiplier, fixed to `−1` (normal extremal).
    pub p0: f64,
    pub terminal: DVector<f64>,
}

fn combined_a(c: &crate::linearize::NodeCoefficients) -> DMatrix<f64> {
    let (n_x, n_z) = (c.a.nrows(), c.d.nrows());
    let mut a = DMatrix::zeros(n_x + n_z, n_x + n_z);
    a.view_mut((0, 0), (n_x, n_x)).copy_from(&c.a);
    a.view_mut((0, n_x), (n_x, n_z)).copy_from(&c.az);
    a.view_mut((n_x, n_x), (n_z, n_z)).copy_from(&c.d);
    a
}

fn combined_b(c: &crate::linearize::NodeCoefficients) -> DMatrix<f64> {
    let (n_x, n_z, m) = (c.a.nrows(), c.d.nrows(), c.bmap.ncols());
    let mut b = DMatrix::zeros(n_x + n_z, m);
    b.view_mut((0, 0), (n_x, m)).copy_from(&c.bmap);
    b.view_mut((n_x, 0), (n_z, m)).copy_from(&c.emap);
    b
}

/// `p_{N−1} = 𝔭`, `p_i = p_{i+1} + h(Âᵢᵀ p_{i+1} + p⁰ ∇f⁰_i)` with `p⁰ = −1`, where `Â` is the
/// `(μ, z)` Jacobian and `∇f⁰_i` the running-cost gradient in `μ` (zero in `z`).
pub fn backward_adjoint(
    coeffs: &LtvCoefficients,
    cost: &LinearizedCost,
    terminal: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<AdjointTrajectory, PmpError> {
    let dims = coeffs.dims;
    let dim = dims.n_x + dims.n_z;
    if terminal.len() != dim {
        return Err(PmpError::Terminal {
            expected: dim,
            got: terminal.len(),
        });
    }
    let n = grid.nodes();
    let h = grid.step();
    let p0 = -1.0;
    let mut p = vec![DVector::zeros(dim); n];
    p[n - 1] = terminal.clone();
    for i in (0..n - 1).rev() {
        let a = combined_a(&coeffs.nodes[i]);
        let mut grad = DVector::zeros(dim);
        grad.rows_mut(0, dims.n_x).copy_from(&cost.gradient[i]);
        p[i] = &p[i + 1] + (a.transpose() * &p[i + 1] + grad * p0) * h;
    }
    Ok(AdjointTrajectory {
        p,
        p0,
        terminal: terminal.clone(),
    })
}

/// Hamiltonian maximiser at each control node,
/// `u*_i = Π_U(½ W⁻¹ B̂ᵢᵀ p_{i+1})` for `G(u) = uᵀWu` with diagonal `W`.
pub fn maximising_controls(
    adjoint: &AdjointTrajectory,
    coeffs: &LtvCoefficients,
    inst: &OcpInstance,
    grid: &TimeGrid,
) -> Result<Vec<DVector<f64>>, PmpError> {
    let w = &inst.control_cost.weights;
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(PmpError::Unavailable { index, value });
    }
    Ok((0..grid.stages())
        .map(|i| {
            let b = combined_b(&coeffs.nodes[i]);
            let raw = b.transpose() * &adjoint.p[i + 1];
            DVector::from_fn(raw.len(), |j, _| {
                (0.5 * raw[j] / w[j]).clamp(inst.control_lower[j], inst.control_upper[j])
            })
        })
        .collect())
}

/// `max_i ‖u_i − u*_i‖` over the control nodes.
pub fn maximality_residual(
    adjoint: &AdjointTrajectory,
    iterate: &Iterate,
    coeffs: &LtvCoefficients,
    inst: &OcpInstance,
    grid: &TimeGrid,
) -> Result<f64, PmpError> {
    let star = maximising_controls(adjoint, coeffs, inst, grid)?;
    Ok(iterate
        .u
        .iter()
        .zip(&star)
        .map(|(u, s)| (u - s).norm())
        .fold(0.0, f64::max))
}
