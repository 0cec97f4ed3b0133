use crate::problem::Qcqp;

/// Point at which to evaluate the optimality conditions. Missing multipliers are taken as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCandidate {
    pub x: Vec<f64>,
    pub y_eq: Option<Vec<f64>>,
    pub y_bound: Option<Vec<f64>>,
    pub nu: f64,
}

impl KktCandidate {
    pub fn primal(x: Vec<f64>) -> Self {
        Self {
            x,
            y_eq: None,
            y_bound: None,
            nu: 0.0,
        }
    }
}

/// Euclidean norms of the stationarity, primal feasibility and complementarity residuals,
/// plus the infinity norms used by the solver's stopping test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
    pub stationarity_inf: f64,
    pub primal_inf: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
    }
}

/// Evaluates `∇f + Aᵀy_eq + y_bound + ν∇g`, the violation of `Ax = b`, the box and `g ≤ 0`,
/// and the complementarity products of the inequality multipliers.
///
/// Panics if `candidate.x` does not match the problem dimension.
pub fn kkt_residual(p: &Qcqp, candidate: &KktCandidate) -> KktReport {
    let n = p.dim();
    let x = &candidate.x;
    assert_eq!(x.len(), n, "candidate dimension");
    let zeros_eq = vec![0.0; p.num_eq()];
    let zeros_b = vec![0.0; n];
    let y_eq = candidate.y_eq.as_deref().unwrap_or(&zeros_eq);
    let y_b = candidate.y_bound.as_deref().unwrap_or(&zeros_b);

    let mut grad = p.hessian.mul_vec(x);
    grad.iter_mut().zip(&p.linear).for_each(|(g, q)| *g += q);
    let aty = p.eq_matrix.tr_mul_vec(y_eq);
    grad.iter_mut().zip(&aty).for_each(|(g, a)| *g += a);
    grad.iter_mut().zip(y_b).for_each(|(g, y)| *g += y);
    if let Some(qc) = &p.quadratic {
        if candidate.nu != 0.0 {
            let gq = qc.gradient(x);
            grad.iter_mut().zip(&gq).for_each(|(g, v)| *g += candidate.nu * v);
        }
    }

    let mut prim = p.eq_matrix.mul_vec(x);
    prim.iter_mut().zip(&p.eq_rhs).for_each(|(r, b)| *r -= b);
    for j in 0..n {
        prim.push((p.lower[j] - x[j]).max(0.0) + (x[j] - p.upper[j]).max(0.0));
    }
    let mut comp: f64 = 0.0;
    if let Some(qc) = &p.quadratic {
        let g = qc.eval(x);
        prim.push(g.max(0.0));
        comp = comp.max((candidate.nu * g).abs());
    }
    for j in 0..n {
        let y = y_b[j];
        let term = if y < 0.0 {
            -y * (x[j] - p.lower[j])
        } else if y > 0.0 {
            y * (p.upper[j] - x[j])
        } else {
            0.0
        };
        comp = comp.max(term.abs());
    }

    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let inf = |v: &[f64]| v.iter().fold(0.0, |m: f64, a| m.max(a.abs()));
    KktReport {
        stationarity: norm2(&grad),
        primal_feasibility: norm2(&prim),
        complementarity: comp,
        stationarity_inf: inf(&grad),
        primal_inf: inf(&prim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    #[test]
    fn zero_candidate_on_unconstrained_norm_is_stationary() {
        let mut p = Qcqp::new(3);
        p.hessian = CsrMatrix::diagonal(&[2.0, 2.0, 2.0]);
        let r = kkt_residual(&p, &KktCandidate::primal(vec![0.0; 3]));
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn equality_gap_is_reported_as_primal_residual() {
        let mut p = Qcqp::new(2);
        p.eq_matrix = CsrMatrix::identity(2);
        p.eq_rhs = vec![3.0, 4.0];
        let r = kkt_residual(&p, &KktCandidate::primal(vec![0.0, 0.0]));
        assert_eq!(r.primal_feasibility, 5.0);
    }
}
