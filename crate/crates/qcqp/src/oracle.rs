//! Dense brute-force reference solver for small problems, used to cross-check the splitting
//! solver in tests. Enumerates every active pattern of the bounded variables, solves the
//! resulting equality-constrained KKT system by LU, and bisects on the multiplier of the
//! quadratic inequality.

use nalgebra::{DMatrix, DVector};

use crate::problem::Qcqp;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub nu: f64,
}

/// Exact minimiser of `½xᵀ(P+νQ)x + (q+νc)ᵀx` over the polyhedral part, or `None` when no
/// active pattern yields a KKT point.
///
/// Panics if the problem has more than 10 bounded variables.
pub fn polyhedral_minimiser(p: &Qcqp, nu: f64) -> Option<Vec<f64>> {
    let n = p.dim();
    let bounded: Vec<usize> = (0..n)
        .filter(|&j| p.lower[j].is_finite() || p.upper[j].is_finite())
        .collect();
    assert!(bounded.len() <= 10, "brute force limited to 10 bounded variables");

    let mut hess = DMatrix::from_row_slice(n, n, &p.hessian.to_dense());
    let mut lin = DVector::from_column_slice(&p.linear);
    if let Some(qc) = &p.quadratic {
        hess += DMatrix::from_row_slice(n, n, &qc.hessian.to_dense()) * nu;
        lin += DVector::from_column_slice(&qc.linear) * nu;
    }
    let a = DMatrix::from_row_slice(p.num_eq(), n, &p.eq_matrix.to_dense());

    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(bounded.len() as u32);
    for code in 0..patterns {
        // 0 = free, 1 = at lower, 2 = at upper
        let mut fixed = Vec::new();
        let mut c = code;
        let mut ok = true;
        for &j in &bounded {
            match c % 3 {
                1 if p.lower[j].is_finite() => fixed.push((j, p.lower[j], true)),
                2 if p.upper[j].is_finite() => fixed.push((j, p.upper[j], false)),
                0 => {}
                _ => ok = false,
            }
            c /= 3;
        }
        if !ok {
            continue;
        }
        let m = p.num_eq() + fixed.len();
        let dim = n + m;
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        k.view_mut((0, 0), (n, n)).copy_from(&hess);
        for j in 0..n {
            rhs[j] = -lin[j];
        }
        for r in 0..p.num_eq() {
            for j in 0..n {
                k[(n + r, j)] = a[(r, j)];
                k[(j, n + r)] = a[(r, j)];
            }
            rhs[n + r] = p.eq_rhs[r];
        }
        for (f, &(j, v, _)) in fixed.iter().enumerate() {
            let r = n + p.num_eq() + f;
            k[(r, j)] = 1.0;
            k[(j, r)] = 1.0;
            rhs[r] = v;
        }
        let lu = k.clone().full_piv_lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        let resid = (&k * &sol - &rhs).amax();
        if !resid.is_finite() || resid > 1e-7 * (1.0 + rhs.amax()) {
            continue;
        }
        let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let feasible = bounded.iter().all(|&j| {
            x[j] >= p.lower[j] - 1e-9 * (1.0 + p.lower[j].abs())
                && x[j] <= p.upper[j] + 1e-9 * (1.0 + p.upper[j].abs())
        });
        let signs_ok = fixed.iter().enumerate().all(|(f, &(_, _, at_lower))| {
            let mult = sol[n + p.num_eq() + f];
            if at_lower {
                mult <= 1e-9
            } else {
                mult >= -1e-9
            }
        });
        if feasible && signs_ok {
            let xv = DVector::from_column_slice(&x);
            let val = 0.5 * xv.dot(&(&hess * &xv)) + lin.dot(&xv);
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Global minimiser of `p`, or `None` when the problem is infeasible.
pub fn solve_dense(p: &Qcqp) -> Option<OracleSolution> {
    let finish = |x: Vec<f64>, nu| OracleSolution {
        objective: p.objective(&x),
        x,
        nu,
    };
    let x0 = polyhedral_minimiser(p, 0.0)?;
    let Some(qc) = &p.quadratic else {
        return Some(finish(x0, 0.0));
    };
    if qc.eval(&x0) <= 0.0 {
        return Some(finish(x0, 0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut x_hi = loop {
        let x = polyhedral_minimiser(p, hi)?;
        if qc.eval(&x) <= 0.0 {
            break x;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return None;
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let x = polyhedral_minimiser(p, mid)?;
        if qc.eval(&x) <= 0.0 {
            hi = mid;
            x_hi = x;
        } else {
            lo = mid;
        }
    }
    Some(finish(x_hi, hi))
}

/// Random feasible instance with at most 8 variables, 2 equalities, 3 bounded variables and
/// (with probability ¾) an ellipsoidal constraint whose interior contains a known point.
pub fn random_instance(seed: u64) -> Qcqp {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::problem::QuadraticConstraint;
    use crate::sparse::CsrMatrix;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8usize);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let hess = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.05;
    let mut p = Qcqp::new(n);
    p.hessian = CsrMatrix::from_dense(n, n, hess.as_slice()); // symmetric, so layout is irrelevant
    p.linear = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();

    let x_feas: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n_eq = rng.random_range(0..=2usize.min(n - 1));
    let a: Vec<f64> = (0..n_eq * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.eq_matrix = CsrMatrix::from_dense(n_eq, n, &a);
    p.eq_rhs = p.eq_matrix.mul_vec(&x_feas);

    let n_bounded = rng.random_range(0..=3usize.min(n));
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..n_bounded {
        let pick = rng.random_range(k..n);
        idx.swap(k, pick);
        let j = idx[k];
        let kind = rng.random_range(0..4u8);
        if kind != 2 {
            p.lower[j] = x_feas[j] - rng.random_range(0.05..1.0);
        }
        if kind != 1 {
            p.upper[j] = x_feas[j] + rng.random_range(0.05..1.0);
        }
    }

    if rng.random_bool(0.75) {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let c: Vec<f64> = x_feas
            .iter()
            .map(|x| x + rng.random_range(-0.3..0.3))
            .collect();
        let inside: f64 = (0..n).map(|j| w[j] * (x_feas[j] - c[j]).powi(2)).sum();
        let r2 = inside + rng.random_range(0.05..1.0);
        p.quadratic = Some(QuadraticConstraint {
            hessian: CsrMatrix::diagonal(&w.iter().map(|v| 2.0 * v).collect::<Vec<_>>()),
            linear: (0..n).map(|j| -2.0 * w[j] * c[j]).collect(),
            constant: (0..n).map(|j| w[j] * c[j] * c[j]).sum::<f64>() - r2,
        });
    }
    p
}
