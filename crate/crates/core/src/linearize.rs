//! First-order expansion of the dynamics, diffusion and running cost about a reference iterate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{central_difference, Dims, Dynamics, OcpInstance, TimeGrid};
use crate::moments::Iterate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error("reference iterate has {got} nodes, grid has {expected}")]
    Nodes { expected: usize, got: usize },
    #[error("non-finite reference or coefficient at node {0}")]
    NonFinite(usize),
}

/// Expansion at one node about `(u_ref, μ_ref, z_ref)`:
///
/// * `b^x ≈ A x + A_z z + b_off + Bmap u`
/// * `b^z ≈ D z + e_off + Emap u`
/// * `σ(z) ≈ C0 + Σ_j Cz_j (z_j − z_ref,j)`
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoefficients {
    pub a: DMatrix<f64>,
    pub az: DMatrix<f64>,
    pub b_off: DVector<f64>,
    pub bmap: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e_off: DVector<f64>,
    pub emap: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub cz: Vec<DMatrix<f64>>,
    pub u_ref: DVector<f64>,
    pub mu_ref: DVector<f64>,
    pub z_ref: DVector<f64>,
}

impl NodeCoefficients {
    pub fn drift_x(&self, u: &DVector<f64>, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.az * z + &self.b_off + &self.bmap * u
    }

    pub fn drift_z(&self, u: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.d * z + &self.e_off + &self.emap * u
    }

    pub fn diffusion(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut c = self.c0.clone();
        for (j, cz) in self.cz.iter().enumerate() {
            c += cz * (z[j] - self.z_ref[j]);
        }
        c
    }
}

/// Per-node linearisation on the whole grid (node `N−1` reuses the last control).
#[derive(Debug, Clone, PartialEq)]
pub struct LtvCoefficients {
    pub dims: Dims,
    pub nodes: Vec<NodeCoefficients>,
}

/// Running cost `h·[G(u) + L₀(μ_ref) + gᵀ(μ − μ_ref) + w·tr Σ]` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedCost {
    /// `L₀(t_i, μ_ref,i)`.
    pub constant: Vec<f64>,
    /// `∂L₀/∂x` at `μ_ref,i`.
    pub gradient: Vec<DVector<f64>>,
    pub control_weights: DVector<f64>,
    pub variance_weight: f64,
}

pub fn linearize(
    inst: &OcpInstance,
    reference: &Iterate,
    grid: &TimeGrid,
) -> Result<(LtvCoefficients, LinearizedCost), LinearizeError> {
    let n = grid.nodes();
    if reference.mu.len() != n || reference.z.len() != n || reference.u.len() + 1 != n {
        return Err(LinearizeError::Nodes {
            expected: n,
            got: reference.mu.len(),
        });
    }
    let dyn_ = &*inst.dynamics;
    let dims = dyn_.dims();
    let mut nodes = Vec::with_capacity(n);
    let mut constant = Vec::with_capacity(n);
    let mut gradient = Vec::with_capacity(n);
    let mut fx = vec![0.0; dims.n_x];
    let mut fz = vec![0.0; dims.n_z];
    let mut sig = vec![0.0; dims.n_x * dims.d];
    for i in 0..n {
        let t = grid.time(i);
        let u = &reference.u[i.min(n - 2)];
        let mu = &reference.mu[i];
        let z = &reference.z[i];
        let finite = |v: &DVector<f64>| v.iter().all(|e| e.is_finite());
        if !finite(u) || !finite(mu) || !finite(z) {
            return Err(LinearizeError::NonFinite(i));
        }
        let jx = dyn_.drift_x_jacobian(t, u.as_slice(), mu.as_slice(), z.as_slice());
        let (jzz, jzu) = dyn_.drift_z_jacobian(t, u.as_slice(), z.as_slice());
        dyn_.drift_x(t, u.as_slice(), mu.as_slice(), z.as_slice(), &mut fx);
        dyn_.drift_z(t, u.as_slice(), z.as_slice(), &mut fz);
        dyn_.diffusion(t, z.as_slice(), &mut sig);

        let b_off = DVector::from_column_slice(&fx) - &jx.dx * mu - &jx.dz * z - &jx.du * u;
        let e_off = DVector::from_column_slice(&fz) - &jzz * z - &jzu * u;
        let node = NodeCoefficients {
            a: jx.dx,
            az: jx.dz,
            b_off,
            bmap: jx.du,
            d: jzz,
            e_off,
            emap: jzu,
            c0: DMatrix::from_row_slice(dims.n_x, dims.d, &sig),
            cz: dyn_.diffusion_jacobian(t, z.as_slice()),
            u_ref: u.clone(),
            mu_ref: mu.clone(),
            z_ref: z.clone(),
        };
        let all_finite = node.a.iter().chain(node.az.iter()).chain(node.b_off.iter())
            .chain(node.bmap.iter()).chain(node.d.iter()).chain(node.e_off.iter())
            .chain(node.emap.iter()).chain(node.c0.iter())
            .chain(node.cz.iter().flat_map(|m| m.iter()))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(LinearizeError::NonFinite(i));
        }
        nodes.push(node);
        constant.push(inst.state_penalty(t, mu.as_slice()));
        gradient.push(inst.state_penalty_gradient(t, mu.as_slice()));
    }
    Ok((
        LtvCoefficients { dims, nodes },
        LinearizedCost {
            constant,
            gradient,
            control_weights: inst.control_cost.weights.clone(),
            variance_weight: inst.variance_weight,
        },
    ))
}

/// Evaluation point for [`check_jacobians`].
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPoint {
    pub t: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Worst entrywise error `|analytic − fd| / max(1, |fd|)` of the instance's drift and
/// diffusion Jacobians against central differences with the given step.
pub fn check_jacobians(inst: &OcpInstance, p: &JacobianPoint, step: f64) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    let dyn_ = &*inst.dynamics;
    let Dims { n_x, n_z, d, .. } = dyn_.dims();
    let (t, u, x, z) = (p.t, &p.u[..], &p.x[..], &p.z[..]);

    let jx = dyn_.drift_x_jacobian(t, u, x, z);
    let (jzz, jzu) = dyn_.drift_z_jacobian(t, u, z);
    let jsig = dyn_.diffusion_jacobian(t, z);

    let mut pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> = vec![
        (jx.dx, central_difference(x, n_x, step, |q, o| dyn_.drift_x(t, u, q, z, o))),
        (jx.dz, central_difference(z, n_x, step, |q, o| dyn_.drift_x(t, u, x, q, o))),
        (jx.du, central_difference(u, n_x, step, |q, o| dyn_.drift_x(t, q, x, z, o))),
        (jzz, central_difference(z, n_z, step, |q, o| dyn_.drift_z(t, u, q, o))),
        (jzu, central_difference(u, n_z, step, |q, o| dyn_.drift_z(t, q, z, o))),
    ];
    let flat = central_difference(z, n_x * d, step, |q, o| dyn_.diffusion(t, q, o));
    for (j, analytic) in jsig.into_iter().enumerate() {
        pairs.push((analytic, DMatrix::from_row_slice(n_x, d, flat.column(j).as_slice())));
    }
    pairs
        .iter()
        .flat_map(|(a, f)| {
            assert_eq!(a.shape(), f.shape(), "Jacobian shape");
            a.iter().zip(f.iter()).map(|(a, f)| (a - f).abs() / f.abs().max(1.0))
        })
        .fold(0.0, f64::max)
}

/// The linearised system as an SDE in its own right, so it can be sampled. Time `t` selects
/// the coefficients of the nearest grid node.
#[derive(Debug, Clone)]
pub struct LtvDynamics {
    coeffs: LtvCoefficients,
    step: f64,
}

impl LtvDynamics {
    pub fn new(coeffs: LtvCoefficients, grid: &TimeGrid) -> Self {
        Self {
            coeffs,
            step: grid.step(),
        }
    }

    fn node(&self, t: f64) -> &NodeCoefficients {
        let i = (t / self.step).round().max(0.0) as usize;
        &self.coeffs.nodes[i.min(self.coeffs.nodes.len() - 1)]
    }
}

impl Dynamics for LtvDynamics {
    fn dims(&self) -> Dims {
        self.coeffs.dims
    }

    fn drift_x(&self, t: f64, u: &[f64], x: &[f64], z: &[f64], out: &mut [f64]) {
        let c = self.node(t);
        let v = c.drift_x(
            &DVector::from_column_slice(u),
            &DVector::from_column_slice(x),
            &DVector::from_column_slice(z),
        );
        out.copy_from_slice(v.as_slice());
    }

    fn drift_z(&self, t: f64, u: &[f64], z: &[f64], out: &mut [f64]) {
        let c = self.node(t);
        let v = c.drift_z(&DVector::from_column_slice(u), &DVector::from_column_slice(z));
        out.copy_from_slice(v.as_slice());
    }

    fn diffusion(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let c = self.node(t).diffusion(&DVector::from_column_slice(z));
        let (r, k) = c.shape();
        for a in 0..r {
            for b in 0..k {
                out[a * k + b] = c[(a, b)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::Car;

    #[test]
    fn car_diffusion_expansion_at_unit_speed_and_rate() {
        let inst = OcpInstance::new(Arc::new(Car { alpha2: 0.1, beta2: 0.01 }), 5.0);
        let grid = TimeGrid::new(3, 1.0).unwrap();
        let mut it = Iterate::constant(&inst, &grid);
        for z in &mut it.z {
            *z = DVector::from_column_slice(&[1.0, 1.0]);
        }
        let (c, _) = linearize(&inst, &it, &grid).unwrap();
        let diag = [0.1, 0.1, 0.01];
        for k in 0..3 {
            assert_eq!(c.nodes[0].c0[(k, k)], diag[k]);
            assert_eq!(c.nodes[0].cz[0][(k, k)], diag[k]);
            assert_eq!(c.nodes[0].cz[1][(k, k)], diag[k]);
        }
    }
}
