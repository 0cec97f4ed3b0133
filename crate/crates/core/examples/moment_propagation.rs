//! Mean and covariance recursions of a linear SDE against their closed forms.
//!
//! For `dx = −κx dt + s dB` the variance obeys `Σ̇ = −2κΣ + s²`, so from `Σ(0) = 0`
//! it is `s²(1 − e^{−2κt}) / 2κ`.

use std::sync::Arc;

use nalgebra::DVector;
use sscp::linearize::linearize;
use sscp::model::{LinearModel, OcpInstance, TimeGrid};
use sscp::moments::{discretize, propagate, Iterate};

fn main() {
    let (kappa, s) = (1.0, 1.0);
    let model = LinearModel::ornstein_uhlenbeck(kappa, s);
    let mut inst = OcpInstance::new(Arc::new(model), 5.0);
    inst.x0 = DVector::from_vec(vec![2.0]);

    println!("{:>6} {:>12} {:>12} {:>12}", "N", "Σ(5)", "exact", "error");
    for nodes in [51, 101, 501, 2001] {
        let grid = TimeGrid::new(nodes, 5.0).unwrap();
        let (coeffs, _) = linearize(&inst, &Iterate::constant(&inst, &grid), &grid).unwrap();
        let zero = vec![DVector::zeros(1); nodes - 1];
        let it = propagate(&coeffs, &zero, &inst.x0, &inst.z0, &grid).unwrap();
        let exact = s * s * (1.0 - (-2.0 * kappa * 5.0f64).exp()) / (2.0 * kappa);
        let sigma = it.sigma[nodes - 1][(0, 0)];
        println!("{nodes:>6} {sigma:>12.8} {exact:>12.8} {:>12.2e}", (sigma - exact).abs());

        // the same recursion as explicit affine stage maps, which the convex program uses
        let direct = discretize(&coeffs, &grid).rollout(&zero, &inst.x0, &inst.z0);
        assert!((direct.sigma[nodes - 1][(0, 0)] - sigma).abs() < 1e-14);
    }
    println!("\nforward Euler is first order: the error shrinks with h");
}
