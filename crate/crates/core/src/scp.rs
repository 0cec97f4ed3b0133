//! Outer loop: linearise, assemble, solve, shrink the trust region.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sscp_qcqp::{solve, ProblemError, Solution, SolverOptions, Status, WarmStart};
use thiserror::Error;

use crate::linearize::{linearize, LinearizeError, LinearizedCost, LtvCoefficients};
use crate::model::{OcpInstance, TimeGrid};
use crate::moments::Iterate;
use crate::subproblem::{build, build_with, BuildError, ConvexSubproblem, Terminal};

#[derive(Debug, Error)]
pub enum ScpError {
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("initial iterate does not match the grid")]
    Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScpOptions {
    pub delta0: f64,
    pub shrink: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
    /// Weight of the terminal slack when an infeasible subproblem is retried elastically.
    pub restoration_weight: f64,
}

impl Default for ScpOptions {
    fn default() -> Self {
        Self {
            delta0: 100.0,
            shrink: 0.99,
            tol: 1e-3,
            max_iter: 100,
            solver: SolverOptions::default(),
            restoration_weight: 1e4,
        }
    }
}

/// Outcome of one subproblem solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepStatus {
    Optimal,
    /// The hard terminal condition was infeasible for the linearisation; the step came from
    /// the elastic program.
    Restored,
    MaxIter,
    Infeasible,
    Unbounded,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "OPTIMAL",
            Self::Restored => "RESTORED",
            Self::MaxIter => "MAX_ITER",
            Self::Infeasible => "INFEASIBLE",
            Self::Unbounded => "UNBOUNDED",
        }
    }
}

impl From<Status> for StepStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Optimal => Self::Optimal,
            Status::MaxIter => Self::MaxIter,
            Status::Infeasible => Self::Infeasible,
            Status::Unbounded => Self::Unbounded,
        }
    }
}

/// Per-iteration log line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub delta: f64,
    pub objective: f64,
    /// Absent for the first two iterations, which lack a solved predecessor pair.
    pub metric: Option<f64>,
    /// Estimated trust-region left side over `Δ` (see [`strict_trust_region_check`]).
    pub usage: f64,
    pub strict: bool,
    /// Left side of the constraint actually imposed, over `Δ`.
    pub surrogate_usage: f64,
    /// `max_i tr Σ_i` of the new iterate.
    pub max_trace_sigma: f64,
    pub status: StepStatus,
    pub solver_iterations: usize,
    /// Multiplier of the trust-region constraint.
    pub trust_multiplier: f64,
    /// `‖(μ_{N−1}, z_{N−1}) − goal‖_∞`.
    pub terminal_gap: f64,
}

/// Linearisation, program and solution of the last accepted step.
#[derive(Debug, Clone)]
pub struct FinalStep {
    pub coeffs: LtvCoefficients,
    pub cost: LinearizedCost,
    pub subproblem: ConvexSubproblem,
    pub solution: Solution,
}

#[derive(Debug, Clone)]
pub struct ScpResult {
    /// Initial iterate followed by one entry per accepted step.
    pub history: Vec<Iterate>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub last_step: Option<FinalStep>,
    /// Why the loop stopped early, if it did.
    pub failure: Option<String>,
}

impl ScpResult {
    pub fn final_iterate(&self) -> &Iterate {
        self.history.last().expect("history holds the initial iterate")
    }
}

/// Straight line from the initial to the goal state with zero controls and covariance.
pub fn initial_guess(inst: &OcpInstance, grid: &TimeGrid) -> Iterate {
    let n = grid.nodes();
    let dims = inst.dims();
    let lerp = |a: &DVector<f64>, b: &DVector<f64>, i: usize| {
        let s = i as f64 / (n - 1) as f64;
        a + (b - a) * s
    };
    Iterate {
        u: vec![DVector::zeros(dims.m); n - 1],
        mu: (0..n).map(|i| lerp(&inst.x0, &inst.goal_x, i)).collect(),
        z: (0..n).map(|i| lerp(&inst.z0, &inst.goal_z, i)).collect(),
        sigma: vec![DMatrix::zeros(dims.n_x, dims.n_x); n],
    }
}

/// `Σ_i h(‖u_next,i − u_curr,i‖² + ‖u_curr,i − u_prev,i‖²)` over the control nodes.
pub fn convergence_metric(
    u_next: &[DVector<f64>],
    u_curr: &[DVector<f64>],
    u_prev: &[DVector<f64>],
    grid: &TimeGrid,
) -> f64 {
    let h = grid.step();
    u_next
        .iter()
        .zip(u_curr)
        .zip(u_prev)
        .map(|((a, b), c)| h * ((a - b).norm_squared() + (b - c).norm_squared()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionCheck {
    pub strict: bool,
    pub usage: f64,
    pub lhs: f64,
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance between centred Gaussians with covariances `a` and `b`.
fn gaussian_w2_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.iter().all(|v| *v == 0.0) && b.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let rb = psd_sqrt(b);
    let cross = psd_sqrt(&(&rb * a * &rb));
    (a.trace() + b.trace() - 2.0 * cross.trace()).max(0.0)
}

/// Estimates `Σ_i h·E‖x_i − x_prev,i‖²` by `Σ_i h[‖μ_i − μ_prev,i‖² + W₂²(Σ_i, Σ_prev,i)]`,
/// the value under the closest coupling of the two Gaussian marginals, and compares it
/// with `delta`. The estimate vanishes when consecutive iterates coincide.
pub fn strict_trust_region_check(
    curr: &Iterate,
    prev: &Iterate,
    delta: f64,
    grid: &TimeGrid,
) -> TrustRegionCheck {
    let h = grid.step();
    let lhs: f64 = (0..grid.stages())
        .map(|i| {
            h * ((&curr.mu[i] - &prev.mu[i]).norm_squared()
                + gaussian_w2_sq(&curr.sigma[i], &prev.sigma[i]))
        })
        .sum();
    let usage = if delta.is_infinite() { 0.0 } else { lhs / delta };
    TrustRegionCheck {
        strict: lhs < delta,
        usage,
        lhs,
    }
}

/// Left side of the imposed constraint, `Σ_i h[2 tr Σ_i + 2 tr Σ_prev,i + ‖μ_i − μ_prev,i‖²]`.
pub fn surrogate_trust_region_lhs(curr: &Iterate, prev: &Iterate, grid: &TimeGrid) -> f64 {
    let h = grid.step();
    (0..grid.stages())
        .map(|i| {
            h * (2.0 * curr.trace(i)
                + 2.0 * prev.trace(i)
                + (&curr.mu[i] - &prev.mu[i]).norm_squared())
        })
        .sum()
}

pub fn run(
    inst: &OcpInstance,
    init: Iterate,
    grid: &TimeGrid,
    opts: &ScpOptions,
) -> Result<ScpResult, ScpError> {
    run_with_log(inst, init, grid, opts, |_, _| {})
}

/// Runs the loop, calling `log` with the record and the solved program after every step.
pub fn run_with_log(
    inst: &OcpInstance,
    init: Iterate,
    grid: &TimeGrid,
    opts: &ScpOptions,
    mut log: impl FnMut(&IterationRecord, &ConvexSubproblem),
) -> Result<ScpResult, ScpError> {
    if init.nodes() != grid.nodes() || init.u.len() + 1 != grid.nodes() {
        return Err(ScpError::Init);
    }
    let mut result = ScpResult {
        history: vec![init],
        records: Vec::new(),
        converged: false,
        iterations: 0,
        last_step: None,
        failure: None,
    };
    let mut delta = opts.delta0;
    let mut warm: Option<WarmStart> = None;
    let goal = inst.goal_x.iter().chain(inst.goal_z.iter()).copied().collect::<Vec<_>>();

    for k in 1..=opts.max_iter {
        if k > 1 {
            delta *= opts.shrink;
        }
        let reference = result.history.last().expect("non-empty history");
        let (coeffs, cost) = linearize(inst, reference, grid)?;
        let hard = build(inst, &coeffs, &cost, reference, delta, grid)?;
        let mut sol = solve(&hard.qcqp, &opts.solver, warm.as_ref())?;
        let mut status = StepStatus::from(sol.status);
        let mut sub = hard;
        if sol.status == Status::Infeasible {
            let elastic = build_with(
                inst,
                &coeffs,
                &cost,
                reference,
                delta,
                grid,
                Terminal::Elastic {
                    weight: opts.restoration_weight,
                },
            )?;
            let retry = solve(&elastic.qcqp, &opts.solver, None)?;
            if retry.status == Status::Optimal {
                sol = retry;
                sub = elastic;
                status = StepStatus::Restored;
            }
        }
        if !matches!(status, StepStatus::Optimal | StepStatus::Restored) {
            result.failure = Some(format!(
                "iteration {k}: subproblem solver returned {} (primal residual {:.3e}, dual residual {:.3e})",
                status.as_str(),
                sol.primal_residual,
                sol.dual_residual
            ));
            break;
        }

        let next = sub.unpack(&sol.x);
        let n_hist = result.history.len();
        // the metric needs two solved predecessors; the initial guess does not count
        let metric = (n_hist >= 3).then(|| {
            convergence_metric(&next.u, &reference.u, &result.history[n_hist - 2].u, grid)
        });
        let check = strict_trust_region_check(&next, reference, delta, grid);
        let surrogate = surrogate_trust_region_lhs(&next, reference, grid);
        let last = grid.nodes() - 1;
        let terminal_gap = next.mu[last]
            .iter()
            .chain(next.z[last].iter())
            .zip(&goal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let record = IterationRecord {
            k,
            delta,
            objective: sol.objective,
            metric,
            usage: check.usage,
            strict: check.strict,
            surrogate_usage: if delta.is_infinite() { 0.0 } else { surrogate / delta },
            max_trace_sigma: (0..next.nodes()).map(|i| next.trace(i)).fold(0.0, f64::max),
            status,
            solver_iterations: sol.iterations,
            trust_multiplier: sol.nu,
            terminal_gap,
        };
        log(&record, &sub);
        result.records.push(record);
        result.history.push(next);
        result.iterations = k;
        warm = (sub.terminal == Terminal::Hard).then(|| sol.warm_start());
        result.last_step = Some(FinalStep {
            coeffs,
            cost,
            subproblem: sub,
            solution: sol,
        });
        if status == StepStatus::Optimal && metric.is_some_and(|m| m <= opts.tol) {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}
