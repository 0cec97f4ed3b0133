//! Validates the converged car controls on the non-linear SDE: collision rate and how well the
//! planned covariance predicts the sampled spread.
//!
//! ```text
//! cargo run --release -p sscp --example monte_carlo -- 20000 3
//! ```

use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::montecarlo::simulate_summary;
use sscp::scp::{initial_guess, run, ScpOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let paths: usize = args.next().map_or(10_000, |a| a.parse().expect("paths"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));

    let cfg = BenchmarkConfig::shipped();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let res = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
    let plan = res.final_iterate();

    let s = simulate_summary(&inst, &plan.u, &grid, paths, seed, 0).unwrap();
    println!("{paths} paths, seed {seed}: {} collisions, rate {:.4}", s.collisions, s.collision_rate);

    let mo = s.moments.expect("at least two paths");
    println!("\n{:>4} {:>10} {:>10} {:>10} {:>10}", "node", "plan rx", "MC rx", "plan var", "MC var");
    for i in (0..grid.nodes()).step_by(8) {
        println!(
            "{i:>4} {:>10.4} {:>10.4} {:>10.2e} {:>10.2e}",
            plan.mu[i][0],
            mo.mean[i][0],
            plan.sigma[i][(0, 0)],
            mo.cov[i][(0, 0)]
        );
    }
    let first = s.first_collision.iter().position(|c| *c > 0);
    if let Some(i) = first {
        println!("\nearliest collision at node {i} (t = {:.3})", grid.time(i));
    }
}
