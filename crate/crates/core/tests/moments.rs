use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscp::config::{build_car_benchmark, BenchmarkConfig};
use sscp::linearize::{linearize, LtvCoefficients, NodeCoefficients};
use sscp::model::{Dims, LinearModel, OcpInstance, TimeGrid};
use sscp::moments::{
    discretize, nominal_rollout, pack, packed_index, packed_len, propagate, unpack, Iterate, MomentError,
};
use sscp::montecarlo::{empirical_moments, simulate};

fn linear_coeffs(model: &LinearModel, grid: &TimeGrid) -> LtvCoefficients {
    let inst = OcpInstance::new(Arc::new(model.clone()), grid.horizon());
    linearize(&inst, &Iterate::constant(&inst, grid), grid).unwrap().0
}

fn random_coeffs(dims: Dims, nodes: usize, rng: &mut ChaCha8Rng) -> LtvCoefficients {
    let Dims { n_x, n_z, m, d } = dims;
    let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let nodes = (0..nodes)
        .map(|_| NodeCoefficients {
            a: mat(n_x, n_x),
            az: mat(n_x, n_z),
            b_off: mat(n_x, 1).column(0).into_owned(),
            bmap: mat(n_x, m),
            d: mat(n_z, n_z),
            e_off: mat(n_z, 1).column(0).into_owned(),
            emap: mat(n_z, m),
            c0: mat(n_x, d),
            cz: (0..n_z).map(|_| mat(n_x, d)).collect(),
            u_ref: mat(m, 1).column(0).into_owned(),
            mu_ref: mat(n_x, 1).column(0).into_owned(),
            z_ref: mat(n_z, 1).column(0).into_owned(),
        })
        .collect();
    LtvCoefficients { dims, nodes }
}

fn random_controls(m: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..count).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))).collect()
}

#[test]
fn ornstein_uhlenbeck_variance_matches_lyapunov_solution() {
    let grid = TimeGrid::new(501, 5.0).unwrap();
    let coeffs = linear_coeffs(&LinearModel::ornstein_uhlenbeck(1.0, 1.0), &grid);
    let zero = DVector::zeros(1);
    let it = propagate(&coeffs, &vec![zero.clone(); 500], &zero, &zero, &grid).unwrap();
    let exact = (1.0 - (-10.0f64).exp()) / 2.0;
    assert!((it.sigma[500][(0, 0)] - exact).abs() < 2e-2);
    // the first step from Σ₀ = 0 is exactly h
    assert_eq!(it.sigma[1][(0, 0)], 0.01);
    assert!(it.mu.iter().all(|m| m[0] == 0.0));
}

#[test]
fn zero_diffusion_gives_zero_covariance_and_the_euler_rollout() {
    let mut model = LinearModel::actuated_double_integrator(0.0);
    model.b_off[0] = 0.25;
    let mut inst = OcpInstance::new(Arc::new(model.clone()), 2.0);
    inst.x0 = DVector::from_vec(vec![1.0, -0.5]);
    inst.z0 = DVector::from_vec(vec![0.3]);
    let grid = TimeGrid::new(11, 2.0).unwrap();
    let (coeffs, _) = linearize(&inst, &Iterate::constant(&inst, &grid), &grid).unwrap();
    let controls: Vec<_> = (0..10).map(|i| DVector::from_vec(vec![(i as f64 * 0.7).sin()])).collect();
    let it = propagate(&coeffs, &controls, &inst.x0, &inst.z0, &grid).unwrap();
    assert!(it.sigma.iter().all(|s| s.iter().all(|v| *v == 0.0)));

    // hand-written Euler loop
    let h = grid.step();
    let (mut p, mut v, mut z) = (1.0, -0.5, 0.3);
    for (i, u) in controls.iter().enumerate() {
        let (dp, dv, dz) = (v + 0.25, z, u[0] - z);
        p += h * dp;
        v += h * dv;
        z += h * dz;
        assert!((it.mu[i + 1][0] - p).abs() < 1e-14);
        assert!((it.mu[i + 1][1] - v).abs() < 1e-14);
        assert!((it.z[i + 1][0] - z).abs() < 1e-14);
    }
    let nominal = nominal_rollout(&inst, &controls, &grid).unwrap();
    for i in 0..11 {
        assert!((&nominal.mu[i] - &it.mu[i]).amax() < 1e-14);
    }
}

#[test]
fn discretisation_of_pure_integrator() {
    let mut model = LinearModel::zeros(Dims { n_x: 2, n_z: 1, m: 2, d: 1 });
    model.b = DMatrix::identity(2, 2);
    let grid = TimeGrid::new(11, 1.0).unwrap();
    let disc = discretize(&linear_coeffs(&model, &grid), &grid);
    assert_eq!(disc.stages.len(), 10);
    for st in &disc.stages {
        assert_eq!(st.phi, DMatrix::identity(2, 2));
        assert_eq!(st.gamma, DMatrix::identity(2, 2) * 0.1);
        assert_eq!(st.s, DMatrix::identity(3, 3));
    }
}

#[test]
fn two_node_grid_is_a_single_affine_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = Dims { n_x: 3, n_z: 2, m: 2, d: 2 };
    let grid = TimeGrid::new(2, 0.5).unwrap();
    let coeffs = random_coeffs(dims, 2, &mut rng);
    let disc = discretize(&coeffs, &grid);
    assert_eq!(disc.stages.len(), 1);
    let st = &disc.stages[0];
    let x0 = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let z0 = DVector::from_vec(vec![1.0, 2.0]);
    let u = DVector::from_vec(vec![0.5, -0.5]);
    let it = disc.rollout(std::slice::from_ref(&u), &x0, &z0);
    let expected = &st.phi * &x0 + &st.phi_z * &z0 + &st.gamma * &u + &st.gamma_off;
    assert_eq!(it.mu[1], expected);
}

#[test]
fn discrete_rollout_matches_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dims = Dims { n_x: 3, n_z: 2, m: 2, d: 3 };
    for _ in 0..20 {
        let grid = TimeGrid::new(9, 1.0).unwrap();
        let coeffs = random_coeffs(dims, 9, &mut rng);
        let controls = random_controls(2, 8, &mut rng);
        let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let z0 = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let a = propagate(&coeffs, &controls, &x0, &z0, &grid).unwrap();
        let b = discretize(&coeffs, &grid).rollout(&controls, &x0, &z0);
        for i in 0..9 {
            let tol = |m: f64| 1e-14 * (1.0 + m);
            assert!((&a.mu[i] - &b.mu[i]).amax() <= tol(a.mu[i].amax()));
            assert!((&a.z[i] - &b.z[i]).amax() <= tol(a.z[i].amax()));
            assert!((&a.sigma[i] - &b.sigma[i]).amax() <= tol(a.sigma[i].amax()));
        }
    }
}

#[test]
fn controls_length_is_checked() {
    let grid = TimeGrid::new(5, 1.0).unwrap();
    let coeffs = linear_coeffs(&LinearModel::ornstein_uhlenbeck(1.0, 1.0), &grid);
    let zero = DVector::zeros(1);
    assert_eq!(
        propagate(&coeffs, &vec![zero.clone(); 3], &zero, &zero, &grid).unwrap_err(),
        MomentError::Controls { expected: 4, got: 3 }
    );
}

#[test]
fn trace_is_non_decreasing_without_drift() {
    let mut model = LinearModel::zeros(Dims { n_x: 2, n_z: 1, m: 1, d: 2 });
    model.c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5]);
    let grid = TimeGrid::new(30, 3.0).unwrap();
    let coeffs = linear_coeffs(&model, &grid);
    let it = propagate(&coeffs, &vec![DVector::zeros(1); 29], &DVector::zeros(2), &DVector::zeros(1), &grid).unwrap();
    for i in 1..30 {
        assert!(it.trace(i) >= it.trace(i - 1));
    }
}

#[test]
fn car_covariance_stays_symmetric_and_psd() {
    let cfg = BenchmarkConfig::default();
    let inst = build_car_benchmark(&cfg).unwrap();
    let grid = cfg.grid().unwrap();
    let controls: Vec<_> = (0..40)
        .map(|i| DVector::from_vec(vec![0.4 * (i as f64 * 0.2).cos(), 0.3 * (i as f64 * 0.3).sin()]))
        .collect();
    let reference = nominal_rollout(&inst, &controls, &grid).unwrap();
    let (coeffs, _) = linearize(&inst, &reference, &grid).unwrap();
    let it = propagate(&coeffs, &controls, &inst.x0, &inst.z0, &grid).unwrap();
    let (asym, min_eig) = it.covariance_health();
    assert_eq!(asym, 0.0);
    assert!(min_eig >= -1e-10, "min eigenvalue {min_eig}");
    assert!(it.trace(40) > 0.0);
}

/// Empirical covariance of Euler–Maruyama samples of a linear SDE against the propagated
/// moments. The sampled recursion is `Σ⁺ = ΦΣΦᵀ + hCCᵀ`, which differs from the forward
/// Euler moment step by `h²AΣAᵀ`; that gap is added to the sampling band.
#[test]
fn propagated_moments_agree_with_monte_carlo_on_a_linear_sde() {
    let mut model = LinearModel::actuated_double_integrator(0.6);
    model.a[(1, 1)] = -0.5;
    model.a[(1, 0)] = -1.0;
    let mut inst = OcpInstance::new(Arc::new(model.clone()), 2.0);
    inst.x0 = DVector::from_vec(vec![0.5, 0.0]);
    let grid = TimeGrid::new(21, 2.0).unwrap();
    let controls: Vec<_> = (0..20).map(|i| DVector::from_vec(vec![1.0 - 0.1 * i as f64])).collect();
    let coeffs = linear_coeffs(&model, &grid);
    let it = propagate(&coeffs, &controls, &inst.x0, &inst.z0, &grid).unwrap();
    let paths = 100_000;
    let ens = simulate(&inst, &controls, &grid, paths, 9).unwrap();
    let mo = empirical_moments(&ens).unwrap();

    let h = grid.step();
    let phi = DMatrix::identity(2, 2) + &model.a * h;
    let mut em = DMatrix::zeros(2, 2);
    let m = paths as f64;
    for i in 0..21 {
        if i > 0 {
            em = &phi * &em * phi.transpose() + &model.c * model.c.transpose() * h;
        }
        let s = &it.sigma[i];
        // sampling error is governed by the covariance the samples actually have
        for a in 0..2 {
            let se = (em[(a, a)] / m).sqrt();
            assert!((mo.mean[i][a] - it.mu[i][a]).abs() <= 5.0 * se + 1e-12, "mean node {i}");
            for b in 0..2 {
                let se = ((em[(a, a)] * em[(b, b)] + em[(a, b)].powi(2)) / m).sqrt();
                let bias = (s[(a, b)] - em[(a, b)]).abs();
                assert!(
                    (mo.cov[i][(a, b)] - s[(a, b)]).abs() <= 5.0 * se + bias + 1e-14,
                    "cov node {i} ({a},{b}): {} vs {}",
                    mo.cov[i][(a, b)],
                    s[(a, b)]
                );
            }
        }
    }
}

#[test]
fn packed_layout_is_row_major_upper_triangle() {
    assert_eq!(packed_len(3), 6);
    let order: Vec<usize> = (0..3).flat_map(|i| (i..3).map(move |j| packed_index(3, i, j))).collect();
    assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(packed_index(3, 2, 0), packed_index(3, 0, 2));
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(vals in prop::collection::vec(-10.0f64..10.0, 10)) {
        let v = DVector::from_vec(vals);
        let m = unpack(v.as_slice(), 4);
        prop_assert_eq!(&m, &m.transpose());
        prop_assert_eq!(pack(&m), v);
    }

    #[test]
    fn propagation_preserves_exact_symmetry(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { n_x: 3, n_z: 2, m: 2, d: 2 };
        let grid = TimeGrid::new(12, 1.1).unwrap();
        let coeffs = random_coeffs(dims, 12, &mut rng);
        let controls = random_controls(2, 11, &mut rng);
        let it = propagate(&coeffs, &controls, &DVector::zeros(3), &DVector::zeros(2), &grid).unwrap();
        for s in &it.sigma {
            prop_assert_eq!(s, &s.transpose());
        }
    }
}
