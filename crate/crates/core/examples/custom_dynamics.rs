//! Plugging in new dynamics: a pendulum driven through a first-order torque actuator, with
//! noise on the angular rate that grows with the actuator state.
//!
//! `x = (φ, φ̇)`, `z = τ`, `φ̈ = −sin φ − 0.1φ̇ + τ`, `τ̇ = u − τ`, `σ = (0, 0.05 + 0.1τ²)ᵀ`.

use std::sync::Arc;

use nalgebra::DVector;
use sscp::model::{Dims, Dynamics, Labels, OcpInstance, TimeGrid};
use sscp::montecarlo::simulate_summary;
use sscp::scp::{initial_guess, run, ScpOptions};

#[derive(Debug)]
struct Pendulum;

impl Dynamics for Pendulum {
    fn dims(&self) -> Dims {
        Dims { n_x: 2, n_z: 1, m: 1, d: 1 }
    }

    fn labels(&self) -> Labels {
        Labels {
            x: vec!["phi".into(), "phi_dot".into()],
            z: vec!["tau".into()],
            u: vec!["tau_cmd".into()],
        }
    }

    fn drift_x(&self, _t: f64, _u: &[f64], x: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = -x[0].sin() - 0.1 * x[1] + z[0];
    }

    fn drift_z(&self, _t: f64, u: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = u[0] - z[0];
    }

    fn diffusion(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.05 + 0.1 * z[0] * z[0];
    }
    // Jacobians fall back to central differences.
}

fn main() {
    let mut inst = OcpInstance::new(Arc::new(Pendulum), 4.0);
    inst.goal_x = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
    inst.control_lower = DVector::from_vec(vec![-3.0]);
    inst.control_upper = DVector::from_vec(vec![3.0]);
    inst.validate().expect("valid instance");
    let grid = TimeGrid::new(41, 4.0).unwrap();

    let res = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
    println!("converged: {} after {} iterations", res.converged, res.iterations);
    let fin = res.final_iterate();
    let last = grid.nodes() - 1;
    println!("final mean angle {:.6}, variance {:.3e}", fin.mu[last][0], fin.sigma[last][(0, 0)]);

    let mc = simulate_summary(&inst, &fin.u, &grid, 5000, 1, 0).unwrap();
    let mo = mc.moments.unwrap();
    println!("sampled final angle {:.6}, variance {:.3e}", mo.mean[last][0], mo.cov[last][(0, 0)]);
}
