mod common;

use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::model::{LinearModel, OcpInstance, TimeGrid};
use sscp::moments::Iterate;
use sscp::scp::{
    convergence_metric, initial_guess, run, run_with_log, strict_trust_region_check, ScpError, ScpOptions,
    StepStatus,
};
use sscp_qcqp::SolverOptions;

use common::{dense_lq_oracle, lq_instance};

fn l2(a: &[DVector<f64>], b: &[DVector<f64>], h: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| h * (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn tight() -> ScpOptions {
    ScpOptions {
        solver: SolverOptions {
            eps_pri: 1e-10,
            eps_dual: 1e-10,
            max_iter: 200_000,
            ..SolverOptions::default()
        },
        ..ScpOptions::default()
    }
}

#[test]
fn linear_problem_is_a_fixed_point_after_one_step() {
    let (inst, grid, model) = lq_instance();
    let res = run(&inst, initial_guess(&inst, &grid), &grid, &tight()).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 3);
    let (u1, u2) = (&res.history[1].u, &res.history[2].u);
    assert!(l2(u2, u1, grid.step()) < 1e-9, "{}", l2(u2, u1, grid.step()));
    let oracle = dense_lq_oracle(&model, &inst, &grid);
    assert!(l2(u1, &oracle.u, grid.step()) < 1e-7);
    assert_eq!(res.records[0].metric, None);
    assert_eq!(res.records[1].metric, None);
    assert!(res.records[2].metric.unwrap() < 1e-12);
}

#[test]
fn radius_follows_the_geometric_schedule() {
    let cfg = BenchmarkConfig::default();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let opts = ScpOptions {
        tol: 0.0,
        max_iter: 11,
        ..ScpOptions::default()
    };
    let res = run(&inst, initial_guess(&inst, &grid), &grid, &opts).unwrap();
    assert_eq!(res.records.len(), 11);
    assert_eq!(res.records[0].delta, 100.0);
    for w in res.records.windows(2) {
        assert_eq!(w[1].delta, w[0].delta * 0.99);
        assert!(w[1].delta < w[0].delta);
    }
    // Δ₁₀ is the radius after ten shrinks, used by the eleventh subproblem
    let mut d10 = 100.0;
    for _ in 0..10 {
        d10 *= 0.99;
    }
    assert_eq!(res.records[10].delta, d10);
    assert!((d10 - 90.438_207_500_880_4).abs() < 1e-9);
    assert_eq!(res.history.len(), res.iterations + 1);
}

#[test]
fn car_benchmark_converges_and_history_satisfies_its_programs() {
    let cfg = BenchmarkConfig::default();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let mut residuals = Vec::new();
    let mut logged = 0;
    let res = run_with_log(&inst, initial_guess(&inst, &grid), &grid, &ScpOptions::default(), |r, sub| {
        logged += 1;
        assert_eq!(r.k, logged);
        residuals.push(sub.qcqp.num_eq());
    })
    .unwrap();
    assert!(res.converged, "{:?}", res.failure);
    assert!(res.iterations <= 30);
    assert_eq!(logged, res.iterations);
    assert!(res.records.last().unwrap().metric.unwrap() <= 1e-3);
    // at the straight-line guess v ≡ 0, so the linearised lateral motion is frozen and the
    // goal is unreachable: the first step comes from the elastic program
    assert_eq!(res.records[0].status, StepStatus::Restored);
    assert!(res.records[1..].iter().all(|r| r.status == StepStatus::Optimal));

    let step = res.last_step.as_ref().unwrap();
    let x = step
        .subproblem
        .pack_iterate(res.final_iterate(), &inst.goal_x, &inst.goal_z);
    assert!(step.subproblem.dynamics_residual(&x) < 1e-6);
    assert!(res.records.last().unwrap().terminal_gap < 1e-6);

    // usage of the estimated trust region dies out over the last iterations
    let tail: Vec<f64> = res.records.iter().rev().take(4).map(|r| r.usage).collect();
    assert!(tail.windows(2).all(|w| w[0] <= w[1]), "{tail:?}");
    assert!(tail[0] < 1e-4);
    assert!(res.records.iter().rev().take(4).all(|r| r.strict));
}

#[test]
fn metric_examples() {
    let grid = TimeGrid::new(11, 5.0).unwrap();
    let a: Vec<_> = (0..10).map(|i| DVector::from_vec(vec![i as f64, -1.0])).collect();
    assert_eq!(convergence_metric(&a, &a, &a, &grid), 0.0);
    let c = DVector::from_vec(vec![0.3, -0.4]);
    let b: Vec<_> = a.iter().map(|u| u + &c).collect();
    // stage sums with h on each of the N−1 control nodes give t_f·‖c‖²
    let m = convergence_metric(&b, &a, &a, &grid);
    assert!((m - 5.0 * 0.25).abs() < 1e-12);
    assert!((convergence_metric(&b, &a, &b, &grid) - 2.0 * 5.0 * 0.25).abs() < 1e-12);
}

#[test]
fn strict_check_examples() {
    let grid = TimeGrid::new(5, 1.0).unwrap();
    let inst = OcpInstance::new(Arc::new(LinearModel::ornstein_uhlenbeck(1.0, 1.0)), 1.0);
    let mut it = initial_guess(&inst, &grid);
    it.sigma.iter_mut().for_each(|s| s[(0, 0)] = 0.3);
    let same = strict_trust_region_check(&it, &it, 1e-12, &grid);
    assert_eq!(same.usage, 0.0);
    assert!(same.strict);

    // shift every mean by 1: left side Σ h·1 over 4 control nodes = 1
    let mut moved = it.clone();
    moved.mu.iter_mut().for_each(|m| m[0] += 1.0);
    let at = strict_trust_region_check(&moved, &it, 1.0, &grid);
    assert_eq!(at.lhs, 1.0);
    assert_eq!(at.usage, 1.0);
    assert!(!at.strict);
    assert!(strict_trust_region_check(&moved, &it, 1.0 + 1e-12, &grid).strict);

    // scalar W₂² between variances a and b is (√a − √b)²
    let mut wider = it.clone();
    wider.sigma.iter_mut().for_each(|s| s[(0, 0)] = 1.2);
    let w = strict_trust_region_check(&wider, &it, 10.0, &grid);
    let expected = (1.2f64.sqrt() - 0.3f64.sqrt()).powi(2);
    assert!((w.lhs - expected).abs() < 1e-12);
}

#[test]
fn initial_guess_examples() {
    let cfg = BenchmarkConfig::default();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let g = initial_guess(&inst, &grid);
    assert_eq!(g.mu[0].as_slice(), &[0.0, 0.0, 0.0]);
    assert_eq!(g.mu[40].as_slice(), &[2.2, 3.0, 0.0]);
    assert!((g.mu[20][0] - 1.1).abs() < 1e-15);
    assert!(g.u.iter().all(|u| u.iter().all(|v| *v == 0.0)));
    assert!(g.sigma.iter().all(|s| s.iter().all(|v| *v == 0.0)));

    let mut still = inst.clone();
    still.goal_x = still.x0.clone();
    still.goal_z = still.z0.clone();
    let g = initial_guess(&still, &grid);
    assert!(g.mu.iter().all(|m| *m == still.x0));

    let two = TimeGrid::new(2, 1.0).unwrap();
    let g = initial_guess(&inst, &two);
    assert_eq!((g.mu.len(), g.u.len()), (2, 1));
    assert_eq!(g.mu[1], inst.goal_x);
}

#[test]
fn mismatched_initial_iterate_is_rejected() {
    let (inst, grid, _) = lq_instance();
    let other = TimeGrid::new(5, 2.0).unwrap();
    let bad: Iterate = initial_guess(&inst, &other);
    assert!(matches!(run(&inst, bad, &grid, &ScpOptions::default()), Err(ScpError::Init)));
}

proptest! {
    #[test]
    fn metric_is_non_negative_and_zero_only_when_stationary(
        a in prop::collection::vec(-2.0f64..2.0, 8),
        b in prop::collection::vec(-2.0f64..2.0, 8),
        c in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let split = |v: &Vec<f64>| v.chunks(2).map(|s| DVector::from_column_slice(s)).collect::<Vec<_>>();
        let (a, b, c) = (split(&a), split(&b), split(&c));
        let m = convergence_metric(&a, &b, &c, &grid);
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m == 0.0, a == b && b == c);
    }
}
