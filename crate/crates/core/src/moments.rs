//! Mean and covariance dynamics of the linearised SDE under forward Euler.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linearize::{LtvCoefficients, NodeCoefficients};
use crate::model::{OcpInstance, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("expected {expected} controls, got {got}")]
    Controls { expected: usize, got: usize },
    #[error("propagation produced a non-finite value at node {0}")]
    NonFinite(usize),
}

/// Controls on the first `N−1` nodes and mean, deterministic state and covariance on all `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub u: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl Iterate {
    /// Everything held at the initial state with zero controls and covariance.
    pub fn constant(inst: &OcpInstance, grid: &TimeGrid) -> Self {
        let n = grid.nodes();
        let dims = inst.dims();
        Self {
            u: vec![DVector::zeros(dims.m); n - 1],
            mu: vec![inst.x0.clone(); n],
            z: vec![inst.z0.clone(); n],
            sigma: vec![DMatrix::zeros(dims.n_x, dims.n_x); n],
        }
    }

    pub fn nodes(&self) -> usize {
        self.mu.len()
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.sigma[i].trace()
    }

    /// Largest `‖Σ_i − Σ_iᵀ‖_max` and smallest eigenvalue over all nodes.
    pub fn covariance_health(&self) -> (f64, f64) {
        let mut asym: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        for s in &self.sigma {
            asym = asym.max((s - s.transpose()).amax());
            let sym = (s + s.transpose()) * 0.5;
            let e = sym.symmetric_eigenvalues();
            min_eig = min_eig.min(e.iter().copied().fold(f64::INFINITY, f64::min));
        }
        (asym, min_eig)
    }
}

/// Number of entries of the packed upper triangle of an `n × n` symmetric matrix.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(r, c)` (either order) in the row-major packed upper triangle.
pub fn packed_index(n: usize, r: usize, c: usize) -> usize {
    let (i, j) = if r <= c { (r, c) } else { (c, r) };
    i * (2 * n - i + 1) / 2 + (j - i)
}

pub fn pack(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(packed_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            v[k] = m[(i, j)];
            k += 1;
        }
    }
    v
}

pub fn unpack(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Indices of the diagonal entries inside the packed vector.
pub fn packed_diagonal(n: usize) -> Vec<usize> {
    (0..n).map(|i| packed_index(n, i, i)).collect()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Forward-Euler moment recursion of the linearised system:
///
/// * `μ_{i+1} = μ_i + h(A μ_i + A_z z_i + b_off + Bmap u_i)`
/// * `z_{i+1} = z_i + h(D z_i + e_off + Emap u_i)`
/// * `Σ_{i+1} = Σ_i + h(A Σ_i + Σ_i Aᵀ + Sym(C0 C(z_i)ᵀ))`
///
/// where `C(z)` is the diffusion expanded about the reference and `C0` its frozen value there.
pub fn propagate(
    coeffs: &LtvCoefficients,
    controls: &[DVector<f64>],
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Iterate, MomentError> {
    let n = grid.nodes();
    if controls.len() + 1 != n {
        return Err(MomentError::Controls {
            expected: n - 1,
            got: controls.len(),
        });
    }
    let h = grid.step();
    let n_x = coeffs.dims.n_x;
    let mut mu = vec![x0.clone()];
    let mut z = vec![z0.clone()];
    let mut sigma = vec![DMatrix::zeros(n_x, n_x)];
    for i in 0..n - 1 {
        let c = &coeffs.nodes[i];
        let u = &controls[i];
        let (m, zi, s) = (&mu[i], &z[i], &sigma[i]);
        let m_next = m + c.drift_x(u, m, zi) * h;
        let z_next = zi + c.drift_z(u, zi) * h;
        let cross = &c.c0 * c.diffusion(zi).transpose();
        let s_next = s + (&c.a * s + s * c.a.transpose() + sym(&cross)) * h;
        let finite = m_next.iter().chain(z_next.iter()).chain(s_next.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(MomentError::NonFinite(i + 1));
        }
        mu.push(m_next);
        z.push(z_next);
        sigma.push(s_next);
    }
    Ok(Iterate {
        u: controls.to_vec(),
        mu,
        z,
        sigma,
    })
}

/// One forward-Euler step as explicit affine maps, with `Σ` in packed form.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStage {
    /// `I + hA`
    pub phi: DMatrix<f64>,
    /// `h·A_z`
    pub phi_z: DMatrix<f64>,
    /// `h·Bmap`
    pub gamma: DMatrix<f64>,
    /// `h·b_off`
    pub gamma_off: DVector<f64>,
    /// `I + hD`
    pub psi: DMatrix<f64>,
    /// `h·Emap`
    pub psi_u: DMatrix<f64>,
    /// `h·e_off`
    pub psi_off: DVector<f64>,
    /// Packed `Σ ↦ Σ + h(AΣ + ΣAᵀ)`.
    pub s: DMatrix<f64>,
    /// Packed `h·Sym(C0 Cz_jᵀ)`, the coefficient of `z_j`.
    pub s_z: Vec<DVector<f64>>,
    /// Packed `h·[C0C0ᵀ − Σ_j z_ref,j Sym(C0 Cz_jᵀ)]`.
    pub s_off: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLtv {
    pub stages: Vec<DiscreteStage>,
}

fn stage(c: &NodeCoefficients, h: f64) -> DiscreteStage {
    let n_x = c.a.nrows();
    let n_z = c.d.nrows();
    let np = packed_len(n_x);
    let mut s = DMatrix::zeros(np, np);
    let mut basis = DMatrix::zeros(n_x, n_x);
    for a in 0..n_x {
        for b in a..n_x {
            basis[(a, b)] = 1.0;
            basis[(b, a)] = 1.0;
            let image = &basis + (&c.a * &basis + &basis * c.a.transpose()) * h;
            s.set_column(packed_index(n_x, a, b), &pack(&image));
            basis[(a, b)] = 0.0;
            basis[(b, a)] = 0.0;
        }
    }
    let s_z: Vec<DVector<f64>> = c
        .cz
        .iter()
        .map(|cz| pack(&sym(&(&c.c0 * cz.transpose()))) * h)
        .collect();
    let mut s_off = pack(&(&c.c0 * c.c0.transpose())) * h;
    for (j, sz) in s_z.iter().enumerate() {
        s_off -= sz * c.z_ref[j];
    }
    DiscreteStage {
        phi: DMatrix::identity(n_x, n_x) + &c.a * h,
        phi_z: &c.az * h,
        gamma: &c.bmap * h,
        gamma_off: &c.b_off * h,
        psi: DMatrix::identity(n_z, n_z) + &c.d * h,
        psi_u: &c.emap * h,
        psi_off: &c.e_off * h,
        s,
        s_z,
        s_off,
    }
}

pub fn discretize(coeffs: &LtvCoefficients, grid: &TimeGrid) -> DiscreteLtv {
    let h = grid.step();
    DiscreteLtv {
        stages: coeffs.nodes[..grid.stages()].iter().map(|c| stage(c, h)).collect(),
    }
}

impl DiscreteLtv {
    /// Applies the stage maps from `(x0, z0, Σ=0)`.
    pub fn rollout(&self, controls: &[DVector<f64>], x0: &DVector<f64>, z0: &DVector<f64>) -> Iterate {
        let n_x = x0.len();
        let np = packed_len(n_x);
        let mut mu = vec![x0.clone()];
        let mut z = vec![z0.clone()];
        let mut packed = vec![DVector::zeros(np)];
        for (i, st) in self.stages.iter().enumerate() {
            let u = &controls[i];
            mu.push(&st.phi * &mu[i] + &st.phi_z * &z[i] + &st.gamma * u + &st.gamma_off);
            let mut p = &st.s * &packed[i] + &st.s_off;
            for (j, sz) in st.s_z.iter().enumerate() {
                p += sz * z[i][j];
            }
            packed.push(p);
            z.push(&st.psi * &z[i] + &st.psi_u * u + &st.psi_off);
        }
        Iterate {
            u: controls.to_vec(),
            mu,
            z,
            sigma: packed.iter().map(|p| unpack(p.as_slice(), n_x)).collect(),
        }
    }
}

/// Noise-free forward-Euler rollout of the original dynamics; the covariance is left at zero.
pub fn nominal_rollout(
    inst: &OcpInstance,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<Iterate, MomentError> {
    let n = grid.nodes();
    if controls.len() + 1 != n {
        return Err(MomentError::Controls {
            expected: n - 1,
            got: controls.len(),
        });
    }
    let dims = inst.dims();
    let h = grid.step();
    let mut fx = vec![0.0; dims.n_x];
    let mut fz = vec![0.0; dims.n_z];
    let mut mu = vec![inst.x0.clone()];
    let mut z = vec![inst.z0.clone()];
    for i in 0..n - 1 {
        let t = grid.time(i);
        let u = controls[i].as_slice();
        inst.dynamics.drift_x(t, u, mu[i].as_slice(), z[i].as_slice(), &mut fx);
        inst.dynamics.drift_z(t, u, z[i].as_slice(), &mut fz);
        let m_next = &mu[i] + DVector::from_column_slice(&fx) * h;
        let z_next = &z[i] + DVector::from_column_slice(&fz) * h;
        if m_next.iter().chain(z_next.iter()).any(|v| !v.is_finite()) {
            return Err(MomentError::NonFinite(i + 1));
        }
        mu.push(m_next);
        z.push(z_next);
    }
    Ok(Iterate {
        u: controls.to_vec(),
        mu,
        z,
        sigma: vec![DMatrix::zeros(dims.n_x, dims.n_x); n],
    })
}
