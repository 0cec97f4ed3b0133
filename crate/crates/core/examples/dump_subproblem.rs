//! Builds the first convex subproblem of the car benchmark, reports its structure and writes
//! it in the text dump format.
//!
//! ```text
//! cargo run -p sscp --example dump_subproblem -- /tmp/iter_001.txt
//! ```

use std::fs::File;
use std::io::BufWriter;

use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::linearize::linearize;
use sscp::scp::initial_guess;
use sscp::subproblem::build;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "iter_001.txt".into());
    let cfg = BenchmarkConfig::shipped();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let guess = initial_guess(&inst, &grid);
    let (coeffs, cost) = linearize(&inst, &guess, &grid).unwrap();
    let sub = build(&inst, &coeffs, &cost, &guess, 100.0, &grid).unwrap();

    let l = &sub.layout;
    println!("variables {} = {} controls + {} means + {} z + {} packed covariances", l.len(),
        l.mu(0), l.z(0) - l.mu(0), l.sigma(0) - l.z(0), l.len() - l.sigma(0));
    println!("equalities {} (dynamics rows {:?}, terminal rows {:?})", sub.qcqp.num_eq(), sub.dynamics_rows, sub.terminal_rows);
    println!("nonzeros: P {}, A {}", sub.qcqp.hessian.nnz(), sub.qcqp.eq_matrix.nnz());
    sub.audit_convexity().expect("subproblem is convex");

    let w = BufWriter::new(File::create(&path).expect("create dump file"));
    sub.dump(w).expect("write dump");
    println!("written to {path}");
}
