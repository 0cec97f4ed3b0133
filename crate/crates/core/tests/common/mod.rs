//! Shared fixtures: a linear-quadratic instance and an independent dense oracle for it.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use sscp::model::{LinearModel, OcpInstance, TimeGrid};

/// Actuated double integrator steered from rest at the origin to `(1, 0)` at rest, with
/// unbounded controls and no obstacles.
pub fn lq_instance() -> (OcpInstance, TimeGrid, LinearModel) {
    let model = LinearModel::actuated_double_integrator(0.3);
    let mut inst = OcpInstance::new(Arc::new(model.clone()), 2.0);
    inst.goal_x = DVector::from_vec(vec![1.0, 0.0]);
    (inst, TimeGrid::new(21, 2.0).unwrap(), model)
}

pub struct LqOracle {
    pub u: Vec<DVector<f64>>,
    /// Costate on `(x, z)` for nodes `1..N`, i.e. the multiplier of each stage's dynamics.
    pub costate: Vec<DVector<f64>>,
    pub objective: f64,
}

/// Minimises `Σ h uᵀWu` subject to the forward-Euler dynamics of `model`, the initial state
/// and the terminal goal by one dense KKT solve. Only valid without obstacles or bounds, where
/// the covariance block decouples from the controls.
pub fn dense_lq_oracle(model: &LinearModel, inst: &OcpInstance, grid: &TimeGrid) -> LqOracle {
    let (n_x, n_z, m) = (model.a.nrows(), model.d.nrows(), model.b.ncols());
    let ns = n_x + n_z;
    let n = grid.nodes();
    let h = grid.step();
    let mut ahat = DMatrix::zeros(ns, ns);
    ahat.view_mut((0, 0), (n_x, n_x)).copy_from(&model.a);
    ahat.view_mut((0, n_x), (n_x, n_z)).copy_from(&model.az);
    ahat.view_mut((n_x, n_x), (n_z, n_z)).copy_from(&model.d);
    let mut bhat = DMatrix::zeros(ns, m);
    bhat.view_mut((0, 0), (n_x, m)).copy_from(&model.b);
    bhat.view_mut((n_x, 0), (n_z, m)).copy_from(&model.e);
    let mut off = DVector::zeros(ns);
    off.rows_mut(0, n_x).copy_from(&model.b_off);
    off.rows_mut(n_x, n_z).copy_from(&model.e_off);
    let phi = DMatrix::identity(ns, ns) + &ahat * h;

    let nu = (n - 1) * m;
    let nv = nu + n * ns;
    let ncons = ns + (n - 1) * ns + ns;
    let ui = |i: usize| i * m;
    let xi = |i: usize| nu + i * ns;
    let mut kkt = DMatrix::zeros(nv + ncons, nv + ncons);
    let mut rhs = DVector::zeros(nv + ncons);
    for i in 0..n - 1 {
        for c in 0..m {
            kkt[(ui(i) + c, ui(i) + c)] = 2.0 * h * inst.control_cost.weights[c];
        }
    }
    let mut row = nv;
    let put = |kkt: &mut DMatrix<f64>, r: usize, c: usize, v: f64| {
        kkt[(r, c)] += v;
        kkt[(c, r)] += v;
    };
    let start: Vec<f64> = inst.x0.iter().chain(inst.z0.iter()).copied().collect();
    for r in 0..ns {
        put(&mut kkt, row, xi(0) + r, 1.0);
        rhs[row] = start[r];
        row += 1;
    }
    let dyn_row0 = row;
    for i in 0..n - 1 {
        for r in 0..ns {
            put(&mut kkt, row, xi(i + 1) + r, 1.0);
            for c in 0..ns {
                put(&mut kkt, row, xi(i) + c, -phi[(r, c)]);
            }
            for c in 0..m {
                put(&mut kkt, row, ui(i) + c, -h * bhat[(r, c)]);
            }
            rhs[row] = h * off[r];
            row += 1;
        }
    }
    let goal: Vec<f64> = inst.goal_x.iter().chain(inst.goal_z.iter()).copied().collect();
    for r in 0..ns {
        put(&mut kkt, row, xi(n - 1) + r, 1.0);
        rhs[row] = goal[r];
        row += 1;
    }
    let sol = kkt.lu().solve(&rhs).expect("LQ KKT system is nonsingular");
    let u: Vec<DVector<f64>> = (0..n - 1).map(|i| sol.rows(ui(i), m).into_owned()).collect();
    let costate = (0..n - 1)
        .map(|i| sol.rows(dyn_row0 + i * ns, ns).into_owned())
        .collect();
    let objective = u
        .iter()
        .map(|v| h * v.iter().zip(inst.control_cost.weights.iter()).map(|(a, w)| w * a * a).sum::<f64>())
        .sum();
    LqOracle {
        u,
        costate,
        objective,
    }
}
