//! Assembly of the convex program solved at each outer iteration.
//!
//! Decision vector, in order: controls `u_0..u_{N−2}`, means `μ_0..μ_{N−1}`, deterministic
//! states `z_0..z_{N−1}`, packed covariances `Σ_0..Σ_{N−1}`, and, for the elastic variant,
//! a terminal slack of size `n_x + n_z`.

use std::io::{self, Write};
use std::ops::Range;

use nalgebra::DVector;
use sscp_qcqp::{CsrMatrix, ProblemError, Qcqp, QuadraticConstraint, Solution};
use thiserror::Error;

use crate::linearize::{LinearizedCost, LtvCoefficients};
use crate::model::{OcpInstance, TimeGrid};
use crate::moments::{discretize, pack, packed_diagonal, packed_len, unpack, Iterate};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("trust-region radius must be non-negative, got {0}")]
    Delta(f64),
    #[error("reference iterate does not match the grid ({0} nodes)")]
    Reference(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// How the terminal mean condition enters the program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    /// `μ_{N−1} = goal_x`, `z_{N−1} = goal_z`.
    Hard,
    /// `μ_{N−1} − s_x = goal_x`, `z_{N−1} − s_z = goal_z` with `½·weight·‖s‖²` added to the cost.
    Elastic { weight: f64 },
}

/// Offsets of each block in the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nodes: usize,
    pub n_x: usize,
    pub n_z: usize,
    pub m: usize,
    /// Packed covariance length `n_x(n_x+1)/2`.
    pub np: usize,
    pub slack: usize,
}

impl Layout {
    pub fn u(&self, i: usize) -> usize {
        i * self.m
    }
    pub fn mu(&self, i: usize) -> usize {
        (self.nodes - 1) * self.m + i * self.n_x
    }
    pub fn z(&self, i: usize) -> usize {
        self.mu(self.nodes) + i * self.n_z
    }
    pub fn sigma(&self, i: usize) -> usize {
        self.z(self.nodes) + i * self.np
    }
    pub fn slack_start(&self) -> usize {
        self.sigma(self.nodes)
    }
    pub fn len(&self) -> usize {
        self.slack_start() + self.slack
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub qcqp: Qcqp,
    pub layout: Layout,
    /// Equality rows holding the terminal condition (`n_x` mean rows, then `n_z` rows).
    pub terminal_rows: Range<usize>,
    /// Equality rows of the stage dynamics.
    pub dynamics_rows: Range<usize>,
    pub delta: f64,
    pub terminal: Terminal,
}

struct Rows {
    trip: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl Rows {
    fn next(&self) -> usize {
        self.rhs.len()
    }
    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.rhs.len();
        self.trip
            .extend(entries.into_iter().filter(|e| e.1 != 0.0).map(|(c, v)| (r, c, v)));
        self.rhs.push(rhs);
    }
}

/// Assembles the subproblem with a hard terminal condition.
pub fn build(
    inst: &OcpInstance,
    coeffs: &LtvCoefficients,
    cost: &LinearizedCost,
    reference: &Iterate,
    delta: f64,
    grid: &TimeGrid,
) -> Result<ConvexSubproblem, BuildError> {
    build_with(inst, coeffs, cost, reference, delta, grid, Terminal::Hard)
}

pub fn build_with(
    inst: &OcpInstance,
    coeffs: &LtvCoefficients,
    cost: &LinearizedCost,
    reference: &Iterate,
    delta: f64,
    grid: &TimeGrid,
    terminal: Terminal,
) -> Result<ConvexSubproblem, BuildError> {
    if delta.is_nan() || delta < 0.0 {
        return Err(BuildError::Delta(delta));
    }
    let nodes = grid.nodes();
    if reference.nodes() != nodes || reference.u.len() + 1 != nodes {
        return Err(BuildError::Reference(nodes));
    }
    let dims = coeffs.dims;
    let (n_x, n_z, m) = (dims.n_x, dims.n_z, dims.m);
    let np = packed_len(n_x);
    let slack = match terminal {
        Terminal::Hard => 0,
        Terminal::Elastic { .. } => n_x + n_z,
    };
    let lay = Layout {
        nodes,
        n_x,
        n_z,
        m,
        np,
        slack,
    };
    let n = lay.len();
    let h = grid.step();
    let disc = discretize(coeffs, grid);
    let diag = packed_diagonal(n_x);

    // equalities
    let mut rows = Rows {
        trip: Vec::new(),
        rhs: Vec::new(),
    };
    for r in 0..n_x {
        rows.push([(lay.mu(0) + r, 1.0)], inst.x0[r]);
    }
    for r in 0..n_z {
        rows.push([(lay.z(0) + r, 1.0)], inst.z0[r]);
    }
    for r in 0..np {
        rows.push([(lay.sigma(0) + r, 1.0)], 0.0);
    }
    let dyn_start = rows.next();
    for (i, st) in disc.stages.iter().enumerate() {
        for r in 0..n_x {
            let mut e = vec![(lay.mu(i + 1) + r, 1.0)];
            e.extend((0..n_x).map(|c| (lay.mu(i) + c, -st.phi[(r, c)])));
            e.extend((0..n_z).map(|c| (lay.z(i) + c, -st.phi_z[(r, c)])));
            e.extend((0..m).map(|c| (lay.u(i) + c, -st.gamma[(r, c)])));
            rows.push(e, st.gamma_off[r]);
        }
        for r in 0..n_z {
            let mut e = vec![(lay.z(i + 1) + r, 1.0)];
            e.extend((0..n_z).map(|c| (lay.z(i) + c, -st.psi[(r, c)])));
            e.extend((0..m).map(|c| (lay.u(i) + c, -st.psi_u[(r, c)])));
            rows.push(e, st.psi_off[r]);
        }
        for r in 0..np {
            let mut e = vec![(lay.sigma(i + 1) + r, 1.0)];
            e.extend((0..np).map(|c| (lay.sigma(i) + c, -st.s[(r, c)])));
            e.extend(st.s_z.iter().enumerate().map(|(j, sz)| (lay.z(i) + j, -sz[r])));
            rows.push(e, st.s_off[r]);
        }
    }
    let dyn_end = rows.next();
    let last = nodes - 1;
    for r in 0..n_x {
        let mut e = vec![(lay.mu(last) + r, 1.0)];
        if slack > 0 {
            e.push((lay.slack_start() + r, -1.0));
        }
        rows.push(e, inst.goal_x[r]);
    }
    for r in 0..n_z {
        let mut e = vec![(lay.z(last) + r, 1.0)];
        if slack > 0 {
            e.push((lay.slack_start() + n_x + r, -1.0));
        }
        rows.push(e, inst.goal_z[r]);
    }
    let terminal_rows = dyn_end..rows.next();

    // objective
    let mut p_trip = Vec::new();
    let mut q = vec![0.0; n];
    let mut constant = 0.0;
    for i in 0..last {
        for c in 0..m {
            let w = cost.control_weights[c];
            if w != 0.0 {
                p_trip.push((lay.u(i) + c, lay.u(i) + c, 2.0 * h * w));
            }
        }
        let g = &cost.gradient[i];
        let mu_ref = &reference.mu[i];
        for r in 0..n_x {
            q[lay.mu(i) + r] += h * g[r];
        }
        constant += h * (cost.constant[i] - g.dot(mu_ref));
        if cost.variance_weight != 0.0 {
            for &k in &diag {
                q[lay.sigma(i) + k] += h * cost.variance_weight;
            }
        }
    }
    if let Terminal::Elastic { weight } = terminal {
        for k in 0..slack {
            p_trip.push((lay.slack_start() + k, lay.slack_start() + k, weight));
        }
    }

    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for i in 0..last {
        for c in 0..m {
            lower[lay.u(i) + c] = inst.control_lower[c];
            upper[lay.u(i) + c] = inst.control_upper[c];
        }
    }

    // Σ_i h[2 tr Σ_i + 2 tr Σ_ref,i + ‖μ_i − μ_ref,i‖²] ≤ Δ
    let quadratic = delta.is_finite().then(|| {
        let mut q_trip = Vec::new();
        let mut lin = vec![0.0; n];
        let mut r0 = -delta;
        for i in 0..last {
            let mu_ref = &reference.mu[i];
            for r in 0..n_x {
                q_trip.push((lay.mu(i) + r, lay.mu(i) + r, 2.0 * h));
                lin[lay.mu(i) + r] = -2.0 * h * mu_ref[r];
            }
            for &k in &diag {
                lin[lay.sigma(i) + k] = 2.0 * h;
            }
            r0 += h * (2.0 * reference.sigma[i].trace() + mu_ref.norm_squared());
        }
        QuadraticConstraint {
            hessian: CsrMatrix::from_triplets(n, n, &q_trip),
            linear: lin,
            constant: r0,
        }
    });

    let qcqp = Qcqp {
        hessian: CsrMatrix::from_triplets(n, n, &p_trip),
        linear: q,
        constant,
        eq_matrix: CsrMatrix::from_triplets(rows.rhs.len(), n, &rows.trip),
        eq_rhs: rows.rhs,
        lower,
        upper,
        quadratic,
    };
    qcqp.validate()?;
    Ok(ConvexSubproblem {
        qcqp,
        layout: lay,
        terminal_rows,
        dynamics_rows: dyn_start..dyn_end,
        delta,
        terminal,
    })
}

impl ConvexSubproblem {
    pub fn unpack(&self, x: &[f64]) -> Iterate {
        let l = &self.layout;
        let seg = |s: usize, len: usize| DVector::from_column_slice(&x[s..s + len]);
        Iterate {
            u: (0..l.nodes - 1).map(|i| seg(l.u(i), l.m)).collect(),
            mu: (0..l.nodes).map(|i| seg(l.mu(i), l.n_x)).collect(),
            z: (0..l.nodes).map(|i| seg(l.z(i), l.n_z)).collect(),
            sigma: (0..l.nodes)
                .map(|i| unpack(&x[l.sigma(i)..l.sigma(i) + l.np], l.n_x))
                .collect(),
        }
    }

    /// Decision vector of `it`; the elastic slack is set to the terminal gap.
    pub fn pack_iterate(&self, it: &Iterate, goal_x: &DVector<f64>, goal_z: &DVector<f64>) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len()];
        for (i, u) in it.u.iter().enumerate() {
            x[l.u(i)..l.u(i) + l.m].copy_from_slice(u.as_slice());
        }
        for i in 0..l.nodes {
            x[l.mu(i)..l.mu(i) + l.n_x].copy_from_slice(it.mu[i].as_slice());
            x[l.z(i)..l.z(i) + l.n_z].copy_from_slice(it.z[i].as_slice());
            x[l.sigma(i)..l.sigma(i) + l.np].copy_from_slice(pack(&it.sigma[i]).as_slice());
        }
        if l.slack > 0 {
            let last = l.nodes - 1;
            let s = l.slack_start();
            for r in 0..l.n_x {
                x[s + r] = it.mu[last][r] - goal_x[r];
            }
            for r in 0..l.n_z {
                x[s + l.n_x + r] = it.z[last][r] - goal_z[r];
            }
        }
        x
    }

    /// Largest violation of the stage dynamics rows at `x`.
    pub fn dynamics_residual(&self, x: &[f64]) -> f64 {
        let ax = self.qcqp.eq_matrix.mul_vec(x);
        self.dynamics_rows
            .clone()
            .map(|r| (ax[r] - self.qcqp.eq_rhs[r]).abs())
            .fold(0.0, f64::max)
    }

    /// Terminal multiplier `𝔭 = −y_terminal` (sign of the costate at the final node).
    pub fn terminal_multiplier(&self, sol: &Solution) -> DVector<f64> {
        DVector::from_iterator(
            self.terminal_rows.len(),
            self.terminal_rows.clone().map(|r| -sol.y_eq[r]),
        )
    }

    /// Left side of the trust-region inequality (without `−Δ`), or `None` when unbounded.
    pub fn trust_region_lhs(&self, x: &[f64]) -> Option<f64> {
        self.qcqp.quadratic.as_ref().map(|qc| qc.eval(x) + self.delta)
    }

    pub fn audit_convexity(&self) -> Result<(), ProblemError> {
        self.qcqp.audit_convexity()
    }

    /// Writes the program as whitespace-separated sections of sparse triplets; see the README
    /// for the format.
    pub fn dump(&self, mut w: impl Write) -> io::Result<()> {
        let p = &self.qcqp;
        let n = p.dim();
        writeln!(w, "# sscp convex subproblem")?;
        writeln!(w, "dims {} {}", n, p.num_eq())?;
        writeln!(w, "delta {:e}", self.delta)?;
        writeln!(w, "objective_constant {:e}", p.constant)?;
        let tri = |w: &mut dyn Write, name: &str, m: &CsrMatrix, upper_only: bool| -> io::Result<()> {
            let t: Vec<_> = m
                .triplets()
                .into_iter()
                .filter(|&(r, c, _)| !upper_only || r <= c)
                .collect();
            writeln!(w, "{name} {}", t.len())?;
            for (r, c, v) in t {
                writeln!(w, "{r} {c} {v:e}")?;
            }
            Ok(())
        };
        let vec = |w: &mut dyn Write, name: &str, v: &[f64]| -> io::Result<()> {
            writeln!(w, "{name} {}", v.len())?;
            for x in v {
                writeln!(w, "{x:e}")?;
            }
            Ok(())
        };
        tri(&mut w, "P", &p.hessian, true)?;
        vec(&mut w, "q", &p.linear)?;
        tri(&mut w, "A", &p.eq_matrix, false)?;
        vec(&mut w, "b", &p.eq_rhs)?;
        writeln!(w, "bounds {n}")?;
        for (lo, hi) in p.lower.iter().zip(&p.upper) {
            writeln!(w, "{lo:e} {hi:e}")?;
        }
        match &p.quadratic {
            Some(qc) => {
                tri(&mut w, "Q", &qc.hessian, true)?;
                vec(&mut w, "c", &qc.linear)?;
                writeln!(w, "r {:e}", qc.constant)?;
            }
            None => writeln!(w, "Q none")?,
        }
        Ok(())
    }
}
