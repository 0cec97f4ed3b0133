use std::sync::Arc;

use proptest::prelude::*;
use sscp::config::{build_car_benchmark, BenchmarkConfig, PenaltySignSpec};
use sscp::model::{
    eval_drift, eval_obstacle_potential, Car, Dynamics, LinearModel, ModelError, Obstacle, ObstacleSet,
    OcpInstance, PenaltySign, TimeGrid,
};

fn single(center: [f64; 2], radius: f64, clearance: f64) -> ObstacleSet {
    ObstacleSet {
        obstacles: vec![Obstacle { center, radius }],
        clearance,
        weight: 1.0,
        position_index: [0, 1],
    }
}

#[test]
fn default_benchmark_constants() {
    let cfg = BenchmarkConfig::default();
    let inst = build_car_benchmark(&cfg).unwrap();
    assert_eq!(inst.horizon, 5.0);
    assert_eq!(cfg.nodes, 41);
    assert_eq!((cfg.alpha2, cfg.beta2, cfg.lambda, cfg.clearance), (0.1, 0.01, 500.0, 0.1));
    assert_eq!(inst.goal_x.as_slice(), &[2.2, 3.0, 0.0]);
    assert_eq!(inst.goal_z.as_slice(), &[0.0, 0.0]);
    assert_eq!(inst.obstacles.weight, 500.0);
    assert_eq!(inst.obstacles.obstacles.len(), 4);
    assert_eq!(inst.penalty_sign, PenaltySign::Repulsive);
    let d = inst.dims();
    assert_eq!((d.n_x, d.n_z, d.m, d.d), (3, 2, 2, 3));
    let labels = inst.dynamics.labels();
    assert_eq!(labels.x, ["rx", "ry", "theta"]);
}

#[test]
fn shipped_config_is_bit_identical_to_defaults() {
    let shipped = BenchmarkConfig::shipped();
    let default = BenchmarkConfig::default();
    assert_eq!(shipped, default);
    assert_eq!(shipped.alpha2.to_bits(), 0.1f64.to_bits());
    assert_eq!(shipped.beta2.to_bits(), 0.01f64.to_bits());
    assert_eq!(shipped.goal[0].to_bits(), 2.2f64.to_bits());
    let again = BenchmarkConfig::from_json(&shipped.to_json(), "round trip").unwrap();
    assert_eq!(again, shipped);
}

#[test]
fn no_obstacles_means_no_penalty() {
    let mut cfg = BenchmarkConfig::default();
    cfg.obstacles.clear();
    let inst = build_car_benchmark(&cfg).unwrap();
    for x in [[0.0, 0.0, 0.0], [0.8, 2.0, 1.0], [1.45, 0.95, -2.0]] {
        assert_eq!(inst.state_penalty(0.0, &x), 0.0);
        assert!(inst.state_penalty_gradient(0.0, &x).iter().all(|g| *g == 0.0));
    }
}

#[test]
fn zero_noise_config_has_zero_diffusion() {
    let mut cfg = BenchmarkConfig::default();
    cfg.alpha2 = 0.0;
    cfg.beta2 = 0.0;
    let inst = build_car_benchmark(&cfg).unwrap();
    let mut out = [1.0; 9];
    for z in [[0.0, 0.0], [1.0, 1.0], [-3.0, 2.5]] {
        inst.dynamics.diffusion(1.0, &z, &mut out);
        assert!(out.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn car_diffusion_is_diagonal_in_slip() {
    let car = Car { alpha2: 0.1, beta2: 0.01 };
    let mut out = [0.0; 9];
    car.diffusion(0.0, &[2.0, 0.5], &mut out);
    let expected = [0.1, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.01];
    for (o, e) in out.iter().zip(expected) {
        assert!((o - e).abs() < 1e-15);
    }
}

#[test]
fn invalid_benchmarks_are_rejected() {
    let mut cfg = BenchmarkConfig::default();
    cfg.obstacles[1].radius = -0.2;
    assert!(matches!(build_car_benchmark(&cfg), Err(ModelError::Radius { index: 1, .. })));
    let mut cfg = BenchmarkConfig::default();
    cfg.horizon = 0.0;
    assert!(matches!(build_car_benchmark(&cfg), Err(ModelError::Horizon(_))));
    let mut cfg = BenchmarkConfig::default();
    cfg.clearance = -0.1;
    assert!(matches!(build_car_benchmark(&cfg), Err(ModelError::Clearance(_))));
    let mut cfg = BenchmarkConfig::default();
    cfg.control_bounds.lower[0] = 3.0;
    assert!(matches!(build_car_benchmark(&cfg), Err(ModelError::ControlBounds { index: 0, .. })));
    let mut cfg = BenchmarkConfig::default();
    cfg.goal.pop();
    assert!(matches!(build_car_benchmark(&cfg), Err(ModelError::Dimension { .. })));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&BenchmarkConfig::default().to_json()).unwrap();
    v["lamda"] = serde_json::json!(1.0);
    let err = BenchmarkConfig::from_json(&v.to_string(), "typo.json").unwrap_err();
    assert!(err.to_string().contains("lamda"), "{err}");
}

#[test]
fn penalty_sign_flag_parses() {
    let mut v: serde_json::Value = serde_json::from_str(&BenchmarkConfig::default().to_json()).unwrap();
    v["penalty_sign"] = serde_json::json!("as_printed");
    let cfg = BenchmarkConfig::from_json(&v.to_string(), "x").unwrap();
    assert_eq!(cfg.penalty_sign, PenaltySignSpec::AsPrinted);
    let inst = build_car_benchmark(&cfg).unwrap();
    // inside an obstacle the printed potential is negative, so λ·c_o rewards penetration
    assert!(inst.state_penalty(0.0, &[0.8, 2.0, 0.0]) < 0.0);
    let inst = build_car_benchmark(&BenchmarkConfig::default()).unwrap();
    assert!(inst.state_penalty(0.0, &[0.8, 2.0, 0.0]) > 0.0);
}

#[test]
fn potential_examples() {
    let obs = single([1.0, -1.0], 0.5, 0.1);
    assert_eq!(eval_obstacle_potential(&obs, [5.0, 5.0]), 0.0);
    assert!((eval_obstacle_potential(&obs, [1.0, -1.0]) + 0.36).abs() < 1e-15);
    assert_eq!(eval_obstacle_potential(&obs, [1.6, -1.0]), 0.0);
    // overlapping disks add up
    let mut two = single([0.0, 0.0], 1.0, 0.0);
    two.obstacles.push(Obstacle { center: [0.5, 0.0], radius: 1.0 });
    let expected = (0.25 - 1.0) + (0.0 - 1.0);
    assert!((eval_obstacle_potential(&two, [0.5, 0.0]) - expected).abs() < 1e-15);
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let inst = build_car_benchmark(&BenchmarkConfig::default()).unwrap();
    for x in [[0.85, 2.1, 0.3], [1.3, 0.8, -1.0], [0.3, 1.1, 2.0]] {
        let g = inst.state_penalty_gradient(0.0, &x);
        for j in 0..3 {
            let step = 1e-6;
            let mut p = x;
            let mut m = x;
            p[j] += step;
            m[j] -= step;
            let fd = (inst.state_penalty(0.0, &p) - inst.state_penalty(0.0, &m)) / (2.0 * step);
            assert!((g[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "x={x:?} j={j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn collision_ignores_clearance() {
    let obs = single([0.0, 0.0], 0.5, 0.1);
    assert!(obs.collides([0.0, 0.49]));
    assert!(!obs.collides([0.0, 0.55]));
    assert!(eval_obstacle_potential(&obs, [0.0, 0.55]) < 0.0);
}

#[test]
fn grid_is_uniform_with_exact_endpoints() {
    let g = TimeGrid::new(41, 5.0).unwrap();
    assert_eq!(g.step(), 0.125);
    assert_eq!(g.time(0), 0.0);
    assert_eq!(g.time(40), 5.0);
    for i in 1..41 {
        assert!(g.time(i) > g.time(i - 1));
        assert!((g.time(i) - g.time(i - 1) - 0.125).abs() < 1e-15);
    }
    assert!(TimeGrid::new(1, 5.0).is_err());
    assert!(TimeGrid::new(3, -1.0).is_err());
    let g = TimeGrid::new(7, 1.0).unwrap();
    assert_eq!(g.time(6), 1.0);
}

#[test]
fn instance_validation_catches_dimension_errors() {
    let mut inst = OcpInstance::new(Arc::new(LinearModel::ornstein_uhlenbeck(1.0, 1.0)), 1.0);
    inst.validate().unwrap();
    inst.goal_x = nalgebra::DVector::zeros(2);
    assert!(matches!(inst.validate(), Err(ModelError::Dimension { .. })));
    assert!(eval_drift(&inst, 0.0, &[0.0], &[0.0, 1.0], &[0.0]).is_err());
}

fn car_drift(u: [f64; 2], x: [f64; 3], z: [f64; 2]) -> Vec<f64> {
    let car = Car { alpha2: 0.1, beta2: 0.01 };
    let mut dx = [0.0; 3];
    let mut dz = [0.0; 2];
    car.drift_x(0.0, &u, &x, &z, &mut dx);
    car.drift_z(0.0, &u, &z, &mut dz);
    dx.iter().chain(&dz).copied().collect()
}

proptest! {
    #[test]
    fn car_drift_is_affine_in_control(
        u1 in prop::array::uniform2(-2.0f64..2.0),
        u2 in prop::array::uniform2(-2.0f64..2.0),
        x in prop::array::uniform3(-5.0f64..5.0),
        z in prop::array::uniform2(-3.0f64..3.0),
        a in 0.0f64..1.0,
    ) {
        let mix = [a * u1[0] + (1.0 - a) * u2[0], a * u1[1] + (1.0 - a) * u2[1]];
        let f1 = car_drift(u1, x, z);
        let f2 = car_drift(u2, x, z);
        let fm = car_drift(mix, x, z);
        for k in 0..5 {
            let scale = 1.0 + f1[k].abs().max(f2[k].abs());
            prop_assert!((fm[k] - (a * f1[k] + (1.0 - a) * f2[k])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn potential_is_continuous_across_the_inflated_boundary(
        cx in -3.0f64..3.0,
        cy in -3.0f64..3.0,
        radius in 0.05f64..1.0,
        clearance in 0.0f64..0.3,
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let obs = single([cx, cy], radius, clearance);
        let reach = radius + clearance;
        let at = |rho: f64| eval_obstacle_potential(&obs, [cx + rho * angle.cos(), cy + rho * angle.sin()]);
        let inside = at(reach - 1e-9);
        let outside = at(reach + 1e-9);
        prop_assert!((inside - outside).abs() < 1e-8);
        prop_assert!(inside <= 0.0);
        prop_assert_eq!(outside, 0.0);
    }

    #[test]
    fn repulsive_penalty_is_non_negative(rx in -1.0f64..3.0, ry in -1.0f64..4.0) {
        let inst = build_car_benchmark(&BenchmarkConfig::default()).unwrap();
        prop_assert!(inst.state_penalty(0.0, &[rx, ry, 0.0]) >= 0.0);
    }
}
