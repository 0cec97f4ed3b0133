//! ADMM for `min ½xᵀPx + qᵀx  s.t.  l ≤ Cx ≤ u`, in the operator-splitting form popularised
//! by OSQP: Ruiz equilibration, per-row step sizes (stiffer on equality rows), adaptive step
//! size, infeasibility certificates and active-set polishing.

use std::sync::Arc;

use crate::ldl::{EnvelopeMatrix, LdlFactor, Symbolic};
use crate::problem::{dot, inf_norm};
use crate::sparse::CsrMatrix;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;
const RUIZ_ITERS: usize = 15;
const CHECK_INTERVAL: usize = 5;
const ADAPT_INTERVAL: usize = 25;
const EPS_INFEASIBLE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub(crate) struct QpData {
    pub p: CsrMatrix,
    pub q: Vec<f64>,
    pub c: CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdmmSettings {
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone)]
pub(crate) struct QpResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub prim_tol: f64,
    pub dual_tol: f64,
    pub merit_violations: usize,
    pub polished: bool,
}

/// Sparsity analysis of `P + σI + Cᵀ diag(ρ) C`, shared across solves with the same pattern.
#[derive(Debug, Clone)]
pub(crate) struct ReducedPattern {
    sym: Arc<Symbolic>,
}

impl ReducedPattern {
    pub fn new(n: usize, hessians: &[&CsrMatrix], c: &CsrMatrix) -> Self {
        let mut edges = Vec::new();
        for h in hessians {
            for (r, col, _) in h.triplets() {
                if col < r {
                    edges.push((r, col));
                }
            }
        }
        for r in 0..c.nrows() {
            let cols: Vec<usize> = c.row(r).map(|(j, _)| j).collect();
            for (a, &ja) in cols.iter().enumerate() {
                for &jb in &cols[..a] {
                    edges.push((ja, jb));
                }
            }
        }
        Self {
            sym: Arc::new(Symbolic::new(n, &edges)),
        }
    }
}

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
}

struct Scaled {
    p: CsrMatrix,
    q: Vec<f64>,
    c: CsrMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    scaling: Scaling,
}

fn limit(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

fn equilibrate(data: &QpData) -> Scaled {
    let n = data.q.len();
    let m = data.l.len();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut p = data.p.clone();
    let mut c = data.c.clone();
    for _ in 0..RUIZ_ITERS {
        let pc = p.col_inf_norms();
        let cc = c.col_inf_norms();
        let dd: Vec<f64> = (0..n)
            .map(|j| 1.0 / limit(pc[j].max(cc[j])).sqrt())
            .collect();
        let ee: Vec<f64> = c
            .row_inf_norms()
            .into_iter()
            .map(|v| 1.0 / limit(v).sqrt())
            .collect();
        p = p.scale(&dd, &dd);
        c = c.scale(&ee, &dd);
        d.iter_mut().zip(&dd).for_each(|(a, b)| *a *= b);
        e.iter_mut().zip(&ee).for_each(|(a, b)| *a *= b);
    }
    let q: Vec<f64> = data.q.iter().zip(&d).map(|(q, d)| q * d).collect();
    let pc = p.col_inf_norms();
    let mean_col = if n == 0 {
        0.0
    } else {
        pc.iter().sum::<f64>() / n as f64
    };
    let cost = 1.0 / limit(mean_col.max(inf_norm(&q)));
    p.scale_values(cost);
    let q: Vec<f64> = q.iter().map(|v| v * cost).collect();
    let l: Vec<f64> = data.l.iter().zip(&e).map(|(v, e)| v * e).collect();
    let u: Vec<f64> = data.u.iter().zip(&e).map(|(v, e)| v * e).collect();
    Scaled {
        p,
        q,
        c,
        l,
        u,
        scaling: Scaling { d, e, cost },
    }
}

fn factor_reduced(
    pattern: &ReducedPattern,
    p: &CsrMatrix,
    c: &CsrMatrix,
    sigma: f64,
    rho: &[f64],
) -> LdlFactor {
    let mut k = EnvelopeMatrix::zeros(Arc::clone(&pattern.sym));
    for (r, col, v) in p.triplets() {
        if col < r {
            k.add(r, col, v);
        } else if col == r {
            k.add_diagonal(r, v);
        }
    }
    for i in 0..p.nrows() {
        k.add_diagonal(i, sigma);
    }
    let mut row: Vec<(usize, f64)> = Vec::new();
    for (r, &rho_r) in rho.iter().enumerate() {
        row.clear();
        row.extend(c.row(r));
        for (a, &(ja, va)) in row.iter().enumerate() {
            k.add_diagonal(ja, rho_r * va * va);
            for &(jb, vb) in &row[..a] {
                k.add(ja, jb, rho_r * va * vb);
            }
        }
    }
    // σ > 0 and ρ > 0 make the reduced matrix positive definite.
    k.factor().expect("reduced KKT matrix is positive definite")
}

fn rho_vector(l: &[f64], u: &[f64], rho: f64) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(lo, hi)| {
            if is_equality(*lo, *hi) {
                EQ_RHO_FACTOR * rho
            } else {
                rho
            }
        })
        .collect()
}

struct Residuals {
    prim: f64,
    dual: f64,
    prim_tol: f64,
    dual_tol: f64,
    // scaled-space norms used for step-size adaptation
    prim_rel: f64,
    dual_rel: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.prim <= self.prim_tol && self.dual <= self.dual_tol
    }
}

fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], set: &AdmmSettings) -> Residuals {
    let sc = &s.scaling;
    let cx = s.c.mul_vec(x);
    let px = s.p.mul_vec(x);
    let cty = s.c.tr_mul_vec(y);

    let mut prim: f64 = 0.0;
    let (mut n_cx, mut n_z) = (0.0f64, 0.0f64);
    let mut prim_scaled: f64 = 0.0;
    for i in 0..z.len() {
        let inv = 1.0 / sc.e[i];
        prim = prim.max(((cx[i] - z[i]) * inv).abs());
        n_cx = n_cx.max((cx[i] * inv).abs());
        n_z = n_z.max((z[i] * inv).abs());
        prim_scaled = prim_scaled.max((cx[i] - z[i]).abs());
    }
    let mut dual: f64 = 0.0;
    let (mut n_px, mut n_cty, mut n_q) = (0.0f64, 0.0f64, 0.0f64);
    let mut dual_scaled: f64 = 0.0;
    for j in 0..x.len() {
        let inv = 1.0 / (sc.d[j] * sc.cost);
        dual = dual.max(((px[j] + s.q[j] + cty[j]) * inv).abs());
        n_px = n_px.max((px[j] * inv).abs());
        n_cty = n_cty.max((cty[j] * inv).abs());
        n_q = n_q.max((s.q[j] * inv).abs());
        dual_scaled = dual_scaled.max((px[j] + s.q[j] + cty[j]).abs());
    }
    let prim_tol = set.eps_pri * (1.0 + n_cx.max(n_z));
    let dual_tol = set.eps_dual * (1.0 + n_px.max(n_cty).max(n_q));
    let prim_den = inf_norm(&cx).max(inf_norm(z)).max(1e-30);
    let dual_den = inf_norm(&px).max(inf_norm(&cty)).max(inf_norm(&s.q)).max(1e-30);
    Residuals {
        prim,
        dual,
        prim_tol,
        dual_tol,
        prim_rel: prim_scaled / prim_den,
        dual_rel: dual_scaled / dual_den,
    }
}

fn primal_infeasible(s: &Scaled, dy: &[f64]) -> bool {
    let sc = &s.scaling;
    let norm: f64 = dy
        .iter()
        .zip(&sc.e)
        .fold(0.0, |m, (v, e)| f64::max(m, (v * e).abs()));
    if norm < 1e-30 {
        return false;
    }
    let tol = EPS_INFEASIBLE * norm;
    let cty = s.c.tr_mul_vec(dy);
    if cty
        .iter()
        .zip(&sc.d)
        .any(|(v, d)| (v / d).abs() > tol)
    {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let v = dy[i];
        if v > 0.0 {
            if s.u[i].is_infinite() {
                if v * sc.e[i] > tol {
                    return false;
                }
            } else {
                support += s.u[i] * v;
            }
        } else if v < 0.0 {
            if s.l[i].is_infinite() {
                if -v * sc.e[i] > tol {
                    return false;
                }
            } else {
                support += s.l[i] * v;
            }
        }
    }
    support < -tol
}

fn dual_infeasible(s: &Scaled, dx: &[f64]) -> bool {
    let sc = &s.scaling;
    let norm: f64 = dx
        .iter()
        .zip(&sc.d)
        .fold(0.0, |m, (v, d)| f64::max(m, (v * d).abs()));
    if norm < 1e-30 {
        return false;
    }
    let tol = EPS_INFEASIBLE * norm;
    if dot(&s.q, dx) / sc.cost > -tol {
        return false;
    }
    let pdx = s.p.mul_vec(dx);
    if pdx
        .iter()
        .zip(&sc.d)
        .any(|(v, d)| (v / (d * sc.cost)).abs() > tol)
    {
        return false;
    }
    let cdx = s.c.mul_vec(dx);
    for i in 0..cdx.len() {
        let v = cdx[i] / sc.e[i];
        let upper_ok = s.u[i].is_infinite() || v <= tol;
        let lower_ok = s.l[i].is_infinite() || v >= -tol;
        if !(upper_ok && lower_ok) {
            return false;
        }
    }
    true
}

/// Solves the equality-constrained QP on the guessed active set with iterative refinement.
/// Returns scaled `(x, y)` or `None` when the guess is inconsistent.
fn polish(s: &Scaled, z: &[f64], y: &[f64], set: &AdmmSettings) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = s.q.len();
    let m = z.len();
    let mut active = Vec::new();
    let mut target = Vec::new();
    for i in 0..m {
        let is_eq = is_equality(s.l[i], s.u[i]);
        if is_eq {
            active.push(i);
            target.push(s.l[i]);
        } else if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] {
            active.push(i);
            target.push(s.l[i]);
        } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] {
            active.push(i);
            target.push(s.u[i]);
        }
    }
    let ca = s.c.select_rows(&active);
    let na = active.len();
    let dim = n + na;
    let delta = 1e-9;

    let mut edges = Vec::new();
    for (r, c, _) in s.p.triplets() {
        if c < r {
            edges.push((r, c));
        }
    }
    for (r, c, _) in ca.triplets() {
        edges.push((n + r, c));
    }
    let sym = Arc::new(Symbolic::new(dim, &edges));
    let mut k = EnvelopeMatrix::zeros(sym);
    for (r, c, v) in s.p.triplets() {
        if c < r {
            k.add(r, c, v);
        } else if c == r {
            k.add_diagonal(r, v);
        }
    }
    for i in 0..n {
        k.add_diagonal(i, delta);
    }
    for (r, c, v) in ca.triplets() {
        k.add(n + r, c, v);
    }
    for r in 0..na {
        k.add_diagonal(n + r, -delta);
    }
    let factor = k.factor().ok()?;

    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -s.q[j];
    }
    rhs[n..].copy_from_slice(&target);
    let mut sol = rhs.clone();
    factor.solve_in_place(&mut sol);
    for _ in 0..5 {
        // residual of the unregularised system
        let (xs, ys) = sol.split_at(n);
        let px = s.p.mul_vec(xs);
        let cty = ca.tr_mul_vec(ys);
        let cx = ca.mul_vec(xs);
        let mut res = vec![0.0; dim];
        for j in 0..n {
            res[j] = rhs[j] - px[j] - cty[j];
        }
        for r in 0..na {
            res[n + r] = rhs[n + r] - cx[r];
        }
        if inf_norm(&res) < 1e-15 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        factor.solve_in_place(&mut res);
        sol.iter_mut().zip(&res).for_each(|(s, r)| *s += r);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let mut y_full = vec![0.0; m];
    for (k, &i) in active.iter().enumerate() {
        y_full[i] = sol[n + k];
    }
    // multipliers must point the right way on inequality rows
    let sign_tol = set.eps_dual.max(1e-12);
    for (k, &i) in active.iter().enumerate() {
        let is_eq = is_equality(s.l[i], s.u[i]);
        if is_eq {
            continue;
        }
        let yi = sol[n + k];
        let at_lower = target[k] == s.l[i];
        if (at_lower && yi > sign_tol) || (!at_lower && yi < -sign_tol) {
            return None;
        }
    }
    Some((x, y_full))
}

fn is_equality(lo: f64, hi: f64) -> bool {
    lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 * (1.0 + lo.abs())
}

fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Runs ADMM on `data`; `warm` is an unscaled `(x, y)` pair.
pub(crate) fn solve_qp(
    data: &QpData,
    pattern: &ReducedPattern,
    set: &AdmmSettings,
    warm: Option<(&[f64], &[f64])>,
) -> QpResult {
    let s = equilibrate(data);
    let sc = &s.scaling;
    let n = s.q.len();
    let m = s.l.len();

    let (mut x, mut y) = match warm {
        Some((wx, wy)) if wx.len() == n && wy.len() == m => (
            wx.iter().zip(&sc.d).map(|(v, d)| v / d).collect::<Vec<_>>(),
            wy.iter()
                .zip(&sc.e)
                .map(|(v, e)| v * sc.cost / e)
                .collect::<Vec<_>>(),
        ),
        _ => (vec![0.0; n], vec![0.0; m]),
    };
    let mut z: Vec<f64> = s
        .c
        .mul_vec(&x)
        .into_iter()
        .enumerate()
        .map(|(i, v)| project(v, s.l[i], s.u[i]))
        .collect();

    let mut rho_scalar = set.rho;
    let mut rho = rho_vector(&s.l, &s.u, rho_scalar);
    let mut factor = factor_reduced(pattern, &s.p, &s.c, set.sigma, &rho);

    let mut rhs = vec![0.0; n];
    let mut tmp_m = vec![0.0; m];
    let mut xt = vec![0.0; n];
    let mut zt = vec![0.0; m];
    let mut last_merit = f64::INFINITY;
    let mut merit_violations = 0;
    let mut last_polish_prim = f64::INFINITY;
    let mut best: Option<QpResult> = None;

    let finish = |x: &[f64], y: &[f64], status, it, r: &Residuals, mv, polished| QpResult {
        x: x.iter().zip(&sc.d).map(|(v, d)| v * d).collect(),
        y: y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.cost).collect(),
        status,
        iterations: it,
        prim_res: r.prim,
        dual_res: r.dual,
        prim_tol: r.prim_tol,
        dual_tol: r.dual_tol,
        merit_violations: mv,
        polished,
    };

    for it in 1..=set.max_iter {
        for i in 0..m {
            tmp_m[i] = rho[i] * z[i] - y[i];
        }
        s.c.tr_mul_vec_into(&tmp_m, &mut rhs);
        for j in 0..n {
            rhs[j] += set.sigma * x[j] - s.q[j];
        }
        xt.copy_from_slice(&rhs);
        factor.solve_in_place(&mut xt);
        s.c.mul_vec_into(&xt, &mut zt);

        let mut merit = 0.0;
        let mut dx = vec![0.0; n];
        for j in 0..n {
            let xn = set.alpha * xt[j] + (1.0 - set.alpha) * x[j];
            dx[j] = xn - x[j];
            merit += set.sigma * dx[j] * dx[j];
            x[j] = xn;
        }
        let mut dy = vec![0.0; m];
        let mut v_norm = 0.0;
        for i in 0..m {
            let zr = set.alpha * zt[i] + (1.0 - set.alpha) * z[i];
            let v_old = z[i] + y[i] / rho[i];
            let zn = project(zr + y[i] / rho[i], s.l[i], s.u[i]);
            let yn = y[i] + rho[i] * (zr - zn);
            let v_new = zn + yn / rho[i];
            merit += rho[i] * (v_new - v_old) * (v_new - v_old);
            v_norm += rho[i] * v_new * v_new;
            dy[i] = yn - y[i];
            z[i] = zn;
            y[i] = yn;
        }
        let x_norm: f64 = x.iter().map(|v| set.sigma * v * v).sum();
        let floor = (64.0 * f64::EPSILON).powi(2) * (x_norm + v_norm);
        // The first step maps a possibly inconsistent (x, z, y) start onto the operator's
        // range, so monotonicity is only guaranteed from the second step on.
        if it > 2 && merit > last_merit * (1.0 + 1e-12) + floor {
            merit_violations += 1;
        }
        last_merit = merit;

        if it % CHECK_INTERVAL != 0 && it != set.max_iter {
            continue;
        }
        let r = residuals(&s, &x, &z, &y, set);
        if r.converged() {
            let mut out = finish(&x, &y, QpStatus::Solved, it, &r, merit_violations, false);
            if set.polish {
                if let Some(p) = try_polish(&s, &z, &y, set, it, merit_violations) {
                    if p.prim_res <= out.prim_res.max(p.prim_tol) && p.dual_res <= out.dual_res.max(p.dual_tol) {
                        out = p;
                    }
                }
            }
            return out;
        }
        if set.polish && r.prim <= 1e3 * r.prim_tol.max(1e-5) && r.prim < 0.1 * last_polish_prim {
            last_polish_prim = r.prim;
            if let Some(p) = try_polish(&s, &z, &y, set, it, merit_violations) {
                if p.prim_res <= p.prim_tol && p.dual_res <= p.dual_tol {
                    return p;
                }
            }
        }
        if primal_infeasible(&s, &dy) {
            return finish(&x, &y, QpStatus::PrimalInfeasible, it, &r, merit_violations, false);
        }
        if dual_infeasible(&s, &dx) {
            return finish(&x, &y, QpStatus::DualInfeasible, it, &r, merit_violations, false);
        }
        if it == set.max_iter {
            best = Some(finish(&x, &y, QpStatus::MaxIter, it, &r, merit_violations, false));
            break;
        }
        if it % ADAPT_INTERVAL == 0 {
            let ratio = (r.prim_rel / r.dual_rel.max(1e-30)).sqrt();
            let candidate = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
            if candidate > 5.0 * rho_scalar || candidate < 0.2 * rho_scalar {
                rho_scalar = candidate;
                // keep v = z + y/ρ continuous: y is stored, v is derived
                rho = rho_vector(&s.l, &s.u, rho_scalar);
                factor = factor_reduced(pattern, &s.p, &s.c, set.sigma, &rho);
                last_merit = f64::INFINITY;
            }
        }
    }
    best.unwrap_or_else(|| {
        let r = residuals(&s, &x, &z, &y, set);
        finish(&x, &y, QpStatus::MaxIter, set.max_iter, &r, merit_violations, false)
    })
}

fn try_polish(
    s: &Scaled,
    z: &[f64],
    y: &[f64],
    set: &AdmmSettings,
    it: usize,
    merit_violations: usize,
) -> Option<QpResult> {
    let sc = &s.scaling;
    let (px, py) = polish(s, z, y, set)?;
    let pz: Vec<f64> = s
        .c
        .mul_vec(&px)
        .into_iter()
        .enumerate()
        .map(|(i, v)| project(v, s.l[i], s.u[i]))
        .collect();
    let r = residuals(s, &px, &pz, &py, set);
    Some(QpResult {
        x: px.iter().zip(&sc.d).map(|(v, d)| v * d).collect(),
        y: py.iter().zip(&sc.e).map(|(v, e)| v * e / sc.cost).collect(),
        status: QpStatus::Solved,
        iterations: it,
        prim_res: r.prim,
        dual_res: r.dual,
        prim_tol: r.prim_tol,
        dual_tol: r.dual_tol,
        merit_violations,
        polished: true,
    })
}
