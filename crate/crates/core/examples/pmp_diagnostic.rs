//! Surrogate Pontryagin check: the converged controls of a linear-quadratic problem satisfy the
//! maximality condition, while a perturbed control sequence does not.

use std::sync::Arc;

use nalgebra::DVector;
use sscp::model::{LinearModel, OcpInstance, TimeGrid};
use sscp::pmp::{backward_adjoint, maximality_residual};
use sscp::scp::{initial_guess, run, ScpOptions};

fn main() {
    let model = LinearModel::actuated_double_integrator(0.3);
    let mut inst = OcpInstance::new(Arc::new(model), 2.0);
    inst.goal_x = DVector::from_vec(vec![1.0, 0.0]);
    let grid = TimeGrid::new(21, 2.0).unwrap();

    let res = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
    let step = res.last_step.as_ref().expect("at least one step");
    let terminal = step.subproblem.terminal_multiplier(&step.solution);
    let adjoint = backward_adjoint(&step.coeffs, &step.cost, &terminal, &grid).unwrap();
    println!("terminal multiplier {:?}", terminal.as_slice());
    println!("costate at t=0      {:?}", adjoint.p[0].as_slice());

    let fin = res.final_iterate();
    let r = maximality_residual(&adjoint, fin, &step.coeffs, &inst, &grid).unwrap();
    println!("residual of the converged controls {r:.3e}");

    let mut nudged = fin.clone();
    nudged.u.iter_mut().for_each(|u| u[0] += 0.2);
    let r = maximality_residual(&adjoint, &nudged, &step.coeffs, &inst, &grid).unwrap();
    println!("residual after adding 0.2 to every control {r:.3e}");
}
