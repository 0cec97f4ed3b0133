//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use sscp::cli::{audit_points, surrogate_pmp_residual};
use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::linearize::{check_jacobians, linearize};
use sscp::model::{LinearModel, OcpInstance, TimeGrid};
use sscp::moments::{propagate, Iterate};
use sscp::montecarlo::{continuity_probe, simulate_summary};
use sscp::scp::{initial_guess, run, ScpOptions, ScpResult};
use sscp_qcqp::oracle::{random_instance, solve_dense};
use sscp_qcqp::{solve, SolverOptions, Status};

use common::{dense_lq_oracle, lq_instance};

/// Collisions among 10⁴ paths with seed 0 under the converged shipped-benchmark controls,
/// recorded from the first run and frozen as a regression value.
const FROZEN_COLLISIONS: usize = 238;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Car {
    inst: OcpInstance,
    grid: TimeGrid,
    result: ScpResult,
    seconds: f64,
}

fn solve_car() -> Car {
    let cfg = BenchmarkConfig::shipped();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let start = Instant::now();
    let result = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
    Car {
        inst,
        grid,
        result,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn convergence(car: &Car) -> Outcome {
    let r = &car.result;
    let metric = r.records.last().and_then(|x| x.metric);
    outcome(
        r.converged && r.iterations <= 30 && metric.is_some_and(|m| m <= 1e-3) && car.seconds <= 60.0,
        format!(
            "converged={} iterations={} metric={:?} time={:.2}s",
            r.converged, r.iterations, metric, car.seconds
        ),
    )
}

fn terminal(car: &Car) -> Outcome {
    let fin = car.result.final_iterate();
    let last = car.grid.nodes() - 1;
    let gap = (&fin.mu[last] - &car.inst.goal_x)
        .amax()
        .max((&fin.z[last] - &car.inst.goal_z).amax());
    outcome(car.result.converged && gap <= 1e-6, format!("max endpoint deviation {gap:.3e}"))
}

fn strict_trust_region(car: &Car) -> Outcome {
    let usage: Vec<f64> = car.result.records.iter().map(|r| r.usage).collect();
    if usage.len() < 5 {
        return outcome(false, format!("only {} iterations", usage.len()));
    }
    let tail = &usage[usage.len() - 5..];
    let below = tail.iter().all(|u| *u < 1.0);
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        below && monotone,
        format!(
            "last five usage ratios [{}]",
            tail.iter().map(|u| format!("{u:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn collision_band(car: &Car) -> Outcome {
    let start = Instant::now();
    let controls = &car.result.final_iterate().u;
    let s = simulate_summary(&car.inst, controls, &car.grid, 10_000, 0, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (0.0..=0.15).contains(&s.collision_rate) && s.collisions == FROZEN_COLLISIONS && secs <= 10.0,
        format!(
            "rate {:.4} ({} collisions, frozen {}), time {:.2}s",
            s.collision_rate, s.collisions, FROZEN_COLLISIONS, secs
        ),
    )
}

fn moment_oracle() -> Outcome {
    let start = Instant::now();
    let inst = OcpInstance::new(Arc::new(LinearModel::ornstein_uhlenbeck(1.0, 1.0)), 5.0);
    let grid = TimeGrid::new(501, 5.0).unwrap();
    let zero = vec![DVector::zeros(1); 500];
    let (coeffs, _) = linearize(&inst, &Iterate::constant(&inst, &grid), &grid).unwrap();
    let prop = propagate(&coeffs, &zero, &inst.x0, &inst.z0, &grid).unwrap().sigma[500][(0, 0)];
    let m = 100_000;
    let summary = simulate_summary(&inst, &zero, &grid, m, 0, 0).unwrap();
    let emp = summary.moments.unwrap().cov[500][(0, 0)];
    let exact = (1.0 - (-10.0f64).exp()) / 2.0;
    let se = emp * (2.0 / (m as f64 - 1.0)).sqrt();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (prop - exact).abs() <= 2e-2 && (prop - emp).abs() <= 3.0 * se && secs <= 5.0,
        format!(
            "propagated {prop:.5}, closed form {exact:.5}, empirical {emp:.5} (SE {se:.1e}), time {secs:.2}s"
        ),
    )
}

fn lq_fixed_point() -> Outcome {
    let (inst, grid, model) = lq_instance();
    let res = run(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default()).unwrap();
    if res.history.len() < 3 {
        return outcome(false, "fewer than two iterations");
    }
    let h = grid.step();
    let l2 = |a: &[DVector<f64>], b: &[DVector<f64>]| {
        a.iter().zip(b).map(|(x, y)| h * (x - y).norm_squared()).sum::<f64>().sqrt()
    };
    let change = l2(&res.history[2].u, &res.history[1].u);
    let oracle = dense_lq_oracle(&model, &inst, &grid);
    let gap = l2(&res.final_iterate().u, &oracle.u);
    let residual = surrogate_pmp_residual(&res, &inst, &grid)
        .and_then(Result::ok)
        .unwrap_or(f64::INFINITY);
    outcome(
        change < 1e-9 && residual < 1e-6 && gap < 1e-6,
        format!("‖u₂−u₁‖ {change:.2e}, PMP residual {residual:.2e}, distance to oracle {gap:.2e}"),
    )
}

fn jacobian_audit(car: &Car) -> Outcome {
    let worst = audit_points(&car.inst, 100, 0)
        .iter()
        .map(|p| {
            let scale = p.x.iter().chain(&p.z).chain(&p.u).fold(1.0f64, |a, v| a.max(v.abs()));
            check_jacobians(&car.inst, p, 1e-5 * scale)
        })
        .fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("max relative error {worst:.2e} over 100 points"))
}

fn solver_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut misclassified = 0;
    for seed in 0..100 {
        let p = random_instance(seed);
        let reference = solve_dense(&p).expect("generated instances are feasible");
        let sol = solve(&p, &SolverOptions::default(), None).unwrap();
        if sol.status == Status::Infeasible {
            misclassified += 1;
        }
        worst = worst.max((sol.objective - reference.objective).abs() / (1.0 + reference.objective.abs()));
    }
    outcome(
        worst < 1e-6 && misclassified == 0,
        format!("worst relative gap {worst:.2e}, {misclassified} infeasible verdicts"),
    )
}

fn continuity(car: &Car) -> Outcome {
    let u = &car.result.final_iterate().u;
    let e = DVector::from_vec(vec![1.0, 1.0]);
    let ratio = |d: f64| {
        let v: Vec<_> = u.iter().map(|x| x + &e * d).collect();
        let (cg, pg) = continuity_probe(&car.inst, u, &v, &car.grid, 2000, 0).unwrap();
        pg / (cg * cg)
    };
    let (r1, r2) = (ratio(0.1), ratio(0.01));
    let q = r1 / r2;
    outcome(
        (0.5..=2.0).contains(&q),
        format!("path_gap/control_gap² = {r1:.4e} and {r2:.4e}, quotient {q:.3}"),
    )
}

fn run_cli(dir: &Path) -> bool {
    let bin = env!("CARGO_BIN_EXE_sscp");
    let out = dir.to_str().unwrap();
    let solve = Command::new(bin).args(["solve", "--out-dir", out]).output().unwrap();
    let sim = Command::new(bin)
        .args(["simulate", "--out-dir", out, "--paths", "10000", "--seed", "0"])
        .output()
        .unwrap();
    solve.status.code() == Some(0) && sim.status.code() == Some(0)
}

fn determinism() -> Outcome {
    let a = tempfile::TempDir::new().unwrap();
    let b = tempfile::TempDir::new().unwrap();
    if !run_cli(a.path()) || !run_cli(b.path()) {
        return outcome(false, "a CLI run failed");
    }
    let files = [
        "iterates.csv",
        "controls.csv",
        "scp_log.jsonl",
        "summary.json",
        "ensemble.csv",
        "paths.csv",
        "stats.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical", files.len())
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let car = solve_car();
    let results = [
        ("benchmark convergence", convergence(&car)),
        ("terminal constraint", terminal(&car)),
        ("strict trust region", strict_trust_region(&car)),
        ("collision band", collision_band(&car)),
        ("moment oracle", moment_oracle()),
        ("LQ fixed point", lq_fixed_point()),
        ("jacobian audit", jacobian_audit(&car)),
        ("solver oracle", solver_oracle()),
        ("continuity", continuity(&car)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
