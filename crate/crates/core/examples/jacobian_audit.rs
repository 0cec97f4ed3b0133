//! Compares the analytic car Jacobians with central differences at random points and shows
//! the second-order Taylor remainder of the linearisation.

use nalgebra::DVector;
use sscp::cli::audit_points;
use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::linearize::{check_jacobians, linearize};
use sscp::scp::initial_guess;

fn main() {
    let cfg = BenchmarkConfig::shipped();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();

    let errors: Vec<f64> = audit_points(&inst, 100, 0)
        .iter()
        .map(|p| check_jacobians(&inst, p, 1e-5))
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    println!("max relative Jacobian error over {} points: {worst:.2e}", errors.len());

    let mut reference = initial_guess(&inst, &grid);
    reference.z.iter_mut().for_each(|z| *z = DVector::from_vec(vec![0.8, 0.3]));
    let (coeffs, _) = linearize(&inst, &reference, &grid).unwrap();
    let (i, c) = (10, &coeffs.nodes[10]);
    println!("\n{:>8} {:>12}", "radius", "remainder");
    for r in [1e-1, 1e-2, 1e-3] {
        let x = &reference.mu[i] + DVector::from_vec(vec![0.2, -0.1, 1.0]) * r;
        let z = &reference.z[i] + DVector::from_vec(vec![0.5, -0.5]) * r;
        let u = &reference.u[i];
        let mut exact = vec![0.0; 3];
        inst.dynamics
            .drift_x(grid.time(i), u.as_slice(), x.as_slice(), z.as_slice(), &mut exact);
        let err = (DVector::from_vec(exact) - c.drift_x(u, &x, &z)).norm();
        println!("{r:>8.0e} {err:>12.3e}");
    }
}
