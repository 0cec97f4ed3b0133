//! A least-squares fit pulled outside a ball: the trust-region style constraint becomes
//! active and its multiplier is reported alongside the primal solution.

use sscp_qcqp::{kkt_residual, solve, CsrMatrix, KktCandidate, Qcqp, QuadraticConstraint, SolverOptions};

fn main() {
    // minimise ½‖x − (3, 1, −2)‖² subject to x₀ + x₁ + x₂ = 1, 0 ≤ x₁, and ‖x‖² ≤ 1.5
    let target = [3.0, 1.0, -2.0];
    let mut p = Qcqp::new(3);
    p.hessian = CsrMatrix::identity(3);
    p.linear = target.iter().map(|t| -t).collect();
    p.constant = 0.5 * target.iter().map(|t| t * t).sum::<f64>();
    p.eq_matrix = CsrMatrix::from_dense(1, 3, &[1.0, 1.0, 1.0]);
    p.eq_rhs = vec![1.0];
    p.lower[1] = 0.0;
    p.quadratic = Some(QuadraticConstraint {
        hessian: CsrMatrix::diagonal(&[2.0, 2.0, 2.0]),
        linear: vec![0.0; 3],
        constant: -1.5,
    });
    p.validate().expect("well-formed problem");

    let sol = solve(&p, &SolverOptions::default(), None).expect("solve");
    println!("status {}  iterations {}", sol.status, sol.iterations);
    println!("x = {:?}", sol.x);
    println!("objective {:.8}  ball multiplier {:.6}", sol.objective, sol.nu);

    let report = kkt_residual(
        &p,
        &KktCandidate {
            x: sol.x.clone(),
            y_eq: Some(sol.y_eq.clone()),
            y_bound: Some(sol.y_bound.clone()),
            nu: sol.nu,
        },
    );
    println!("KKT residuals: stationarity {:.1e}, feasibility {:.1e}, complementarity {:.1e}",
        report.stationarity, report.primal_feasibility, report.complementarity);
}
