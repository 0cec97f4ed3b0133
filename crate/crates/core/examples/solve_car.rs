//! Runs SCP on the shipped car benchmark and prints the per-iteration log.
//!
//! ```text
//! cargo run --release -p sscp --example solve_car
//! ```

use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::scp::{initial_guess, run_with_log, ScpOptions};

fn main() {
    let cfg = BenchmarkConfig::shipped();
    let inst = build_car_benchmark(&cfg).expect("shipped config is valid");
    let grid = cfg.grid().expect("shipped grid is valid");

    println!("{:>3} {:>10} {:>12} {:>11} {:>9} {:>10}", "k", "delta", "objective", "metric", "usage", "status");
    let result = run_with_log(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default(), |r, _| {
        println!(
            "{:>3} {:>10.4} {:>12.6} {:>11} {:>9.2e} {:>10}",
            r.k,
            r.delta,
            r.objective,
            r.metric.map_or("-".into(), |m| format!("{m:.3e}")),
            r.usage,
            r.status.as_str()
        );
    })
    .expect("SCP run");

    let fin = result.final_iterate();
    let last = grid.nodes() - 1;
    println!("\nconverged: {} after {} iterations", result.converged, result.iterations);
    println!("final mean position ({:.6}, {:.6})", fin.mu[last][0], fin.mu[last][1]);
    let peak = (0..fin.nodes()).map(|i| fin.trace(i)).fold(0.0, f64::max);
    println!("largest tr Σ along the plan {peak:.4e}");
}
