use std::fmt;

use crate::admm::{self, AdmmSettings, QpData, QpResult, QpStatus, ReducedPattern};
use crate::kkt::{kkt_residual, KktCandidate};
use crate::problem::{inf_norm, ProblemError, Qcqp};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "OPTIMAL",
            Status::MaxIter => "MAX_ITER",
            Status::Infeasible => "INFEASIBLE",
            Status::Unbounded => "UNBOUNDED",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Primal feasibility tolerance, applied as `eps_pri * (1 + scale)`.
    pub eps_pri: f64,
    /// Stationarity tolerance, applied as `eps_dual * (1 + scale)`.
    pub eps_dual: f64,
    /// Budget of splitting iterations over all inner solves.
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation in (0, 2).
    pub alpha: f64,
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_pri: 1e-8,
            eps_dual: 1e-8,
            max_iter: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
        }
    }
}

/// Primal/dual point used to start a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_bound: Vec<f64>,
    /// Multiplier of the quadratic inequality; seeds the multiplier search when positive.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Equality multipliers, sign convention `Px + q + Aᵀy + ... = 0`.
    pub y_eq: Vec<f64>,
    /// Bound multipliers per variable: `≤ 0` on an active lower bound, `≥ 0` on an upper one.
    pub y_bound: Vec<f64>,
    /// Multiplier of the quadratic inequality (0 when absent or inactive).
    pub nu: f64,
    pub status: Status,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    /// Value of the quadratic constraint function at `x` (≤ 0 when satisfied).
    pub constraint_value: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub qp_solves: usize,
    /// Iterations at which the splitting's fixed-point residual grew (expected 0).
    pub merit_violations: usize,
    /// Whether the returned point came from the active-set polishing step.
    pub polished: bool,
}

impl Solution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            y_eq: self.y_eq.clone(),
            y_bound: self.y_bound.clone(),
            nu: self.nu,
        }
    }
}

struct Layout {
    c: CsrMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    bounded: Vec<usize>,
    n_eq: usize,
}

impl Layout {
    fn new(p: &Qcqp) -> Self {
        let n = p.dim();
        let bounded: Vec<usize> = (0..n)
            .filter(|&j| p.lower[j].is_finite() || p.upper[j].is_finite())
            .collect();
        let mut trip = p.eq_matrix.triplets();
        let n_eq = p.num_eq();
        trip.extend(bounded.iter().enumerate().map(|(k, &j)| (n_eq + k, j, 1.0)));
        let c = CsrMatrix::from_triplets(n_eq + bounded.len(), n, &trip);
        let mut l = p.eq_rhs.clone();
        let mut u = p.eq_rhs.clone();
        l.extend(bounded.iter().map(|&j| p.lower[j]));
        u.extend(bounded.iter().map(|&j| p.upper[j]));
        Self {
            c,
            l,
            u,
            bounded,
            n_eq,
        }
    }

    fn split_y(&self, y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let y_eq = y[..self.n_eq].to_vec();
        let mut y_bound = vec![0.0; n];
        for (k, &j) in self.bounded.iter().enumerate() {
            y_bound[j] = y[self.n_eq + k];
        }
        (y_eq, y_bound)
    }

    fn join_y(&self, w: &WarmStart) -> Option<Vec<f64>> {
        if w.y_eq.len() != self.n_eq {
            return None;
        }
        let mut y = w.y_eq.clone();
        for &j in &self.bounded {
            y.push(*w.y_bound.get(j)?);
        }
        Some(y)
    }
}

struct Inner<'a> {
    problem: &'a Qcqp,
    layout: Layout,
    pattern: ReducedPattern,
    settings: AdmmSettings,
    budget: usize,
    used: usize,
    solves: usize,
    merit_violations: usize,
}

impl Inner<'_> {
    fn solve_at(&mut self, nu: f64, warm: Option<(&[f64], &[f64])>) -> QpResult {
        let p = self.problem;
        let (hess, lin) = match (&p.quadratic, nu > 0.0) {
            (Some(qc), true) => (
                p.hessian.add_scaled(&qc.hessian, nu),
                p.linear
                    .iter()
                    .zip(&qc.linear)
                    .map(|(a, b)| a + nu * b)
                    .collect(),
            ),
            _ => (p.hessian.clone(), p.linear.clone()),
        };
        let data = QpData {
            p: hess,
            q: lin,
            c: self.layout.c.clone(),
            l: self.layout.l.clone(),
            u: self.layout.u.clone(),
        };
        let mut set = self.settings;
        set.max_iter = self.budget.saturating_sub(self.used).max(1);
        let res = admm::solve_qp(&data, &self.pattern, &set, warm);
        self.used += res.iterations;
        self.solves += 1;
        self.merit_violations += res.merit_violations;
        res
    }
}

/// Solves `p` by splitting on the polyhedral part and a scalar search on the multiplier of
/// the quadratic inequality.
pub fn solve(
    p: &Qcqp,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<Solution, ProblemError> {
    p.validate()?;
    let n = p.dim();
    let layout = Layout::new(p);
    let mut hessians = vec![&p.hessian];
    if let Some(qc) = &p.quadratic {
        hessians.push(&qc.hessian);
    }
    let pattern = ReducedPattern::new(n, &hessians, &layout.c);
    let warm_y = warm.and_then(|w| layout.join_y(w));
    let warm_pair = match (warm, &warm_y) {
        (Some(w), Some(y)) if w.x.len() == n => Some((w.x.as_slice(), y.as_slice())),
        _ => None,
    };
    let mut inner = Inner {
        problem: p,
        layout,
        pattern,
        settings: AdmmSettings {
            eps_pri: opts.eps_pri,
            eps_dual: opts.eps_dual,
            max_iter: opts.max_iter,
            rho: opts.rho,
            sigma: opts.sigma,
            alpha: opts.alpha,
            polish: opts.polish,
        },
        budget: opts.max_iter,
        used: 0,
        solves: 0,
        merit_violations: 0,
    };

    let first = inner.solve_at(0.0, warm_pair);
    let (res, nu, status) = match &p.quadratic {
        None => {
            let status = map_status(first.status);
            (first, 0.0, status)
        }
        Some(qc) => {
            let tol = opts.eps_pri * (1.0 + qc.constant.abs());
            let warm_nu = warm.map_or(0.0, |w| w.nu);
            search_multiplier(&mut inner, first, tol, warm_nu)
        }
    };

    let (y_eq, y_bound) = inner.layout.split_y(&res.y, n);
    let constraint_value = p.quadratic.as_ref().map(|qc| qc.eval(&res.x));
    let report = kkt_residual(
        p,
        &KktCandidate {
            x: res.x.clone(),
            y_eq: Some(y_eq.clone()),
            y_bound: Some(y_bound.clone()),
            nu,
        },
    );
    let ball_tol = p
        .quadratic
        .as_ref()
        .map(|qc| opts.eps_pri * (1.0 + qc.constant.abs()))
        .unwrap_or(0.0);
    Ok(Solution {
        objective: p.objective(&res.x),
        x: res.x,
        y_eq,
        y_bound,
        nu,
        status,
        primal_residual: report.primal_inf,
        dual_residual: report.stationarity_inf,
        primal_tolerance: res.prim_tol.max(ball_tol),
        dual_tolerance: res.dual_tol,
        constraint_value,
        iterations: inner.used,
        qp_solves: inner.solves,
        merit_violations: inner.merit_violations,
        polished: res.polished,
    })
}

fn map_status(s: QpStatus) -> Status {
    match s {
        QpStatus::Solved => Status::Optimal,
        QpStatus::MaxIter => Status::MaxIter,
        QpStatus::PrimalInfeasible => Status::Infeasible,
        QpStatus::DualInfeasible => Status::Unbounded,
    }
}

/// Finds `ν ≥ 0` with `φ(ν) = g(x(ν)) ≈ 0` (or `ν = 0` when already feasible), where `φ` is
/// non-increasing. Bracketing with Illinois-modified regula falsi, falling back to bisection.
fn search_multiplier(
    inner: &mut Inner<'_>,
    first: QpResult,
    tol: f64,
    warm_nu: f64,
) -> (QpResult, f64, Status) {
    let qc = inner.problem.quadratic.as_ref().expect("quadratic constraint");
    let phi = |r: &QpResult| qc.eval(&r.x);

    match first.status {
        QpStatus::PrimalInfeasible => return (first, 0.0, Status::Infeasible),
        QpStatus::MaxIter => return (first, 0.0, Status::MaxIter),
        QpStatus::Solved if phi(&first) <= tol => return (first, 0.0, Status::Optimal),
        _ => {}
    }
    let phi0 = if first.status == QpStatus::DualInfeasible {
        f64::INFINITY
    } else {
        phi(&first)
    };

    let p = inner.problem;
    let base = (1.0 + p.hessian.max_abs() + inf_norm(&p.linear))
        / (1.0 + qc.hessian.max_abs() + inf_norm(&qc.linear));
    let nu_cap = base * 1e14;

    let (mut lo, mut phi_lo) = (0.0, phi0);
    let mut lo_res = first;
    // A multiplier from a nearby problem is usually within a small factor of the answer.
    let (mut hi, growth) = if warm_nu.is_finite() && warm_nu > 0.0 {
        (warm_nu.min(nu_cap), 2.0)
    } else {
        (base, 10.0)
    };
    let mut hi_res;
    let phi_hi;
    loop {
        let warm = (lo_res.x.clone(), lo_res.y.clone());
        let r = inner.solve_at(hi, Some((&warm.0, &warm.1)));
        match r.status {
            QpStatus::PrimalInfeasible => return (r, hi, Status::Infeasible),
            QpStatus::MaxIter => return (r, hi, Status::MaxIter),
            QpStatus::DualInfeasible => {
                lo = hi;
                phi_lo = f64::INFINITY;
                lo_res = r;
            }
            QpStatus::Solved => {
                let v = phi(&r);
                if v <= tol {
                    phi_hi = v;
                    hi_res = r;
                    break;
                }
                lo = hi;
                phi_lo = v;
                lo_res = r;
            }
        }
        if hi >= nu_cap {
            return (lo_res, lo, Status::Infeasible);
        }
        hi *= growth;
    }
    if phi_hi >= -tol {
        return (hi_res, hi, Status::Optimal);
    }

    // φ(lo) > tol, φ(hi) < -tol
    let mut side = 0i8;
    let (mut f_lo, mut f_hi) = (phi_lo, phi_hi);
    for _ in 0..200 {
        let secant = if f_lo.is_finite() {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        } else {
            f64::NAN
        };
        let mid = 0.5 * (lo + hi);
        let nu = if secant.is_finite() && secant > lo && secant < hi {
            secant
        } else {
            mid
        };
        let warm_src = if side >= 0 { &hi_res } else { &lo_res };
        let warm = (warm_src.x.clone(), warm_src.y.clone());
        let r = inner.solve_at(nu, Some((&warm.0, &warm.1)));
        match r.status {
            QpStatus::Solved => {}
            QpStatus::PrimalInfeasible => return (r, nu, Status::Infeasible),
            QpStatus::DualInfeasible => return (r, nu, Status::Unbounded),
            QpStatus::MaxIter => return (r, nu, Status::MaxIter),
        }
        let v = phi(&r);
        if v.abs() <= tol {
            return (r, nu, Status::Optimal);
        }
        if v > 0.0 {
            lo = nu;
            f_lo = v;
            lo_res = r;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = nu;
            f_hi = v;
            hi_res = r;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    (hi_res, hi, Status::Optimal)
}
