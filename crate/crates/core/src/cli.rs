//! The `sscp` command line: `solve`, `simulate` and `check`.
//!
//! Exit codes: 0 success (converged / all audits pass), 1 configuration, input or I/O error,
//! 2 SCP did not converge, 3 an audit failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{build_car_benchmark, BenchmarkConfig, ConfigError};
use crate::linearize::{check_jacobians, linearize, JacobianPoint, LinearizeError, LtvDynamics};
use crate::model::{ModelError, OcpInstance, TimeGrid};
use crate::moments::{nominal_rollout, propagate, MomentError};
use crate::montecarlo::{simulate_summary, McError};
use crate::output::{self, OutputError, SimulationStats};
use crate::pmp::{backward_adjoint, maximality_residual, PmpError};
use crate::scp::{initial_guess, run_with_log, ScpError, ScpOptions, ScpResult};
use crate::subproblem::{build, BuildError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_AUDIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sscp", version, about = "Sequential convex programming for stochastic optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run SCP on a benchmark and write iterates, controls and logs.
    Solve(SolveArgs),
    /// Monte Carlo of the original SDE under a controls file.
    Simulate(SimulateArgs),
    /// Jacobian, control-affinity, moment and convexity audits.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Benchmark JSON; the shipped car benchmark when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Subproblem primal tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub eps_pri: f64,
    /// Subproblem dual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub eps_dual: f64,
    /// Splitting-iteration budget per subproblem.
    #[arg(long, default_value_t = 50_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 100)]
    pub max_scp_iter: usize,
    #[arg(long, default_value_t = 100.0)]
    pub delta0: f64,
    #[arg(long, default_value_t = 0.99)]
    pub shrink: f64,
    /// Threshold on the control-change metric.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Report the surrogate PMP residual of the final iterate.
    #[arg(long)]
    pub pmp_check: bool,
    /// Write every subproblem to `<out-dir>/qp/iter_<k>.txt`.
    #[arg(long)]
    pub dump_qp: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Controls CSV; `<out-dir>/controls.csv` when omitted.
    #[arg(long)]
    pub controls: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Paths in the moment audit.
    #[arg(long, default_value_t = 20_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid benchmark: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Scp(#[from] ScpError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error(transparent)]
    Moments(#[from] MomentError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load(common: &CommonArgs) -> Result<(OcpInstance, TimeGrid), CliError> {
    let config = match &common.config {
        Some(p) => BenchmarkConfig::load(p)?,
        None => BenchmarkConfig::shipped(),
    };
    let inst = build_car_benchmark(&config)?;
    let grid = config.grid()?;
    Ok((inst, grid))
}

/// Parses `args` (including the program name) and runs the command, returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Check(a) => cmd_check(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}

impl SolveArgs {
    pub fn scp_options(&self) -> ScpOptions {
        let mut o = ScpOptions {
            delta0: self.delta0,
            shrink: self.shrink,
            tol: self.tol,
            max_iter: self.max_scp_iter,
            ..ScpOptions::default()
        };
        o.solver.eps_pri = self.eps_pri;
        o.solver.eps_dual = self.eps_dual;
        o.solver.max_iter = self.max_iter;
        o
    }
}

#[derive(Debug, Serialize)]
struct OptionsEcho {
    delta0: f64,
    shrink: f64,
    tol: f64,
    max_scp_iter: usize,
    eps_pri: f64,
    eps_dual: f64,
    max_iter: usize,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum PmpReport {
    Value(f64),
    Unavailable { unavailable: String },
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    converged: bool,
    iterations: usize,
    failure: Option<String>,
    final_objective: Option<f64>,
    final_delta: Option<f64>,
    final_metric: Option<f64>,
    terminal_gap: Option<f64>,
    max_trace_sigma: f64,
    /// Estimated trust-region usage of every iteration, in order.
    usage: Vec<f64>,
    /// Usage of the imposed (tightened) constraint, in order.
    surrogate_usage: Vec<f64>,
    options: OptionsEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_pmp_residual: Option<PmpReport>,
}

/// Surrogate PMP residual of the final iterate, using the last subproblem's linearisation and
/// terminal multipliers.
pub fn surrogate_pmp_residual(
    result: &ScpResult,
    inst: &OcpInstance,
    grid: &TimeGrid,
) -> Option<Result<f64, PmpError>> {
    let step = result.last_step.as_ref()?;
    let terminal = step.subproblem.terminal_multiplier(&step.solution);
    Some(
        backward_adjoint(&step.coeffs, &step.cost, &terminal, grid).and_then(|adj| {
            maximality_residual(&adj, result.final_iterate(), &step.coeffs, inst, grid)
        }),
    )
}

pub fn cmd_solve(a: &SolveArgs) -> Result<i32, CliError> {
    let (inst, grid) = load(&a.common)?;
    let out = &a.common.out_dir;
    create_dir(out)?;
    let qp_dir = out.join("qp");
    if a.dump_qp {
        create_dir(&qp_dir)?;
    }
    let opts = a.scp_options();
    let mut dump_error = None;
    let result = run_with_log(&inst, initial_guess(&inst, &grid), &grid, &opts, |r, sub| {
        println!(
            "iter {:3}  delta {:10.4e}  objective {:12.6e}  metric {:>11}  usage {:8.2e}  {}",
            r.k,
            r.delta,
            r.objective,
            r.metric.map_or("-".to_string(), |m| format!("{m:.4e}")),
            r.usage,
            r.status.as_str()
        );
        if a.dump_qp && dump_error.is_none() {
            let path = qp_dir.join(format!("iter_{:03}.txt", r.k));
            let res = fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .and_then(|w| sub.dump(w));
            if let Err(source) = res {
                dump_error = Some(CliError::Io { path, source });
            }
        }
    })?;
    if let Some(e) = dump_error {
        return Err(e);
    }

    let labels = inst.dynamics.labels();
    let fin = result.final_iterate();
    output::write_iterates_csv(&out.join("iterates.csv"), &labels, &result.history, &grid)?;
    output::write_controls_csv(&out.join("controls.csv"), &labels, &fin.u, &grid)?;
    output::write_json_lines(&out.join("scp_log.jsonl"), &result.records)?;

    let pmp = if a.pmp_check {
        match surrogate_pmp_residual(&result, &inst, &grid) {
            Some(Ok(v)) => Some(PmpReport::Value(v)),
            Some(Err(e)) => Some(PmpReport::Unavailable {
                unavailable: e.to_string(),
            }),
            None => Some(PmpReport::Unavailable {
                unavailable: "no subproblem was solved".into(),
            }),
        }
    } else {
        None
    };
    if let Some(p) = &pmp {
        match p {
            PmpReport::Value(v) => println!("surrogate PMP residual {v:.3e}"),
            PmpReport::Unavailable { unavailable } => println!("{unavailable}"),
        }
    }
    let last = result.records.last();
    let summary = SolveSummary {
        converged: result.converged,
        iterations: result.iterations,
        failure: result.failure.clone(),
        final_objective: last.map(|r| r.objective),
        final_delta: last.map(|r| r.delta),
        final_metric: last.and_then(|r| r.metric),
        terminal_gap: last.map(|r| r.terminal_gap),
        max_trace_sigma: (0..fin.nodes()).map(|i| fin.trace(i)).fold(0.0, f64::max),
        usage: result.records.iter().map(|r| r.usage).collect(),
        surrogate_usage: result.records.iter().map(|r| r.surrogate_usage).collect(),
        options: OptionsEcho {
            delta0: opts.delta0,
            shrink: opts.shrink,
            tol: opts.tol,
            max_scp_iter: opts.max_iter,
            eps_pri: opts.solver.eps_pri,
            eps_dual: opts.solver.eps_dual,
            max_iter: opts.solver.max_iter,
        },
        surrogate_pmp_residual: pmp,
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    if let Some(f) = &result.failure {
        eprintln!("{f}");
    }
    if result.converged {
        println!("converged after {} iterations", result.iterations);
        Ok(EXIT_OK)
    } else {
        println!("not converged after {} iterations", result.iterations);
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// Paths written to `paths.csv`.
pub const KEPT_PATHS: usize = 100;

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32, CliError> {
    let (inst, grid) = load(&a.common)?;
    let out = &a.common.out_dir;
    let controls_path = a.controls.clone().unwrap_or_else(|| out.join("controls.csv"));
    let controls = output::read_controls_csv(&controls_path, inst.dims().m, &grid)?;
    create_dir(out)?;
    let summary = simulate_summary(&inst, &controls, &grid, a.paths, a.seed, KEPT_PATHS)?;
    let labels = inst.dynamics.labels();
    output::write_ensemble_csv(&out.join("ensemble.csv"), &labels, &summary, &grid)?;
    output::write_paths_csv(&out.join("paths.csv"), &labels, &summary, &grid)?;
    output::write_json(
        &out.join("stats.json"),
        &SimulationStats::from_summary(&summary, inst.dims().n_x),
    )?;
    println!(
        "{} paths, seed {}: collision rate {:.4}",
        summary.paths, summary.seed, summary.collision_rate
    );
    Ok(EXIT_OK)
}

/// One line of the audit table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub rows: Vec<AuditRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_AUDIT_FAILED
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<18} {:>12} {:>12}  {:<6} {}\n", "audit", "value", "threshold", "result", "detail");
        for r in &self.rows {
            s += &format!(
                "{:<18} {:>12.4e} {:>12.4e}  {:<6} {}\n",
                r.name,
                r.value,
                r.threshold,
                if r.pass { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub jacobian_points: usize,
    pub jacobian_tol: f64,
    pub affinity_tol: f64,
    /// Paths in the moment audit.
    pub paths: usize,
    /// Allowed deviation in standard errors.
    pub moment_se: f64,
    pub seed: u64,
    pub delta0: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            jacobian_points: 100,
            jacobian_tol: 1e-6,
            affinity_tol: 1e-9,
            paths: 20_000,
            moment_se: 5.0,
            seed: 0,
            delta0: ScpOptions::default().delta0,
        }
    }
}

fn sample_range(a: f64, b: f64, pad: f64) -> (f64, f64) {
    (a.min(b) - pad, a.max(b) + pad)
}

fn finite_box(lo: f64, hi: f64) -> (f64, f64) {
    (if lo.is_finite() { lo } else { -2.0 }, if hi.is_finite() { hi } else { 2.0 })
}

/// Points spread over a box around the initial and goal states and the control bounds.
pub fn audit_points(inst: &OcpInstance, count: usize, seed: u64) -> Vec<JacobianPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = inst.dims();
    (0..count)
        .map(|_| {
            let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
            let t = draw((0.0, inst.horizon));
            let x = (0..dims.n_x).map(|j| draw(sample_range(inst.x0[j], inst.goal_x[j], 1.0))).collect();
            let z = (0..dims.n_z).map(|j| draw(sample_range(inst.z0[j], inst.goal_z[j], 2.0))).collect();
            let u = (0..dims.m)
                .map(|j| draw(finite_box(inst.control_lower[j], inst.control_upper[j])))
                .collect();
            JacobianPoint { t, u, x, z }
        })
        .collect()
}

/// Worst relative violation of `b(u_mid) = ½(b(u₁) + b(u₂))` at the sampled points, which
/// holds exactly for control-affine drifts.
pub fn control_affinity_defect(inst: &OcpInstance, points: &[JacobianPoint]) -> f64 {
    let dims = inst.dims();
    let dyn_ = &*inst.dynamics;
    let mut worst: f64 = 0.0;
    let mut fa = vec![0.0; dims.n_x];
    let mut fb = vec![0.0; dims.n_x];
    let mut fm = vec![0.0; dims.n_x];
    let mut ga = vec![0.0; dims.n_z];
    let mut gb = vec![0.0; dims.n_z];
    let mut gm = vec![0.0; dims.n_z];
    for w in points.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let mid: Vec<f64> = p.u.iter().zip(&q.u).map(|(a, b)| 0.5 * (a + b)).collect();
        dyn_.drift_x(p.t, &p.u, &p.x, &p.z, &mut fa);
        dyn_.drift_x(p.t, &q.u, &p.x, &p.z, &mut fb);
        dyn_.drift_x(p.t, &mid, &p.x, &p.z, &mut fm);
        dyn_.drift_z(p.t, &p.u, &p.z, &mut ga);
        dyn_.drift_z(p.t, &q.u, &p.z, &mut gb);
        dyn_.drift_z(p.t, &mid, &p.z, &mut gm);
        let rows = fa.iter().zip(&fb).zip(&fm).chain(ga.iter().zip(&gb).zip(&gm));
        for ((a, b), m) in rows {
            let scale = 1.0 + a.abs().max(b.abs());
            worst = worst.max((m - 0.5 * (a + b)).abs() / scale);
        }
    }
    worst
}

/// Deviation of Monte Carlo moments of the linearised SDE from the propagated moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentAudit {
    /// `max |μ̂ − μ| / (k·SE)`.
    pub mean_ratio: f64,
    /// `max |Σ̂ − Σ| / (k·SE + |Σ − Σ_EM|)`, where `Σ_EM` is the exact covariance of the
    /// sampled discrete recursion.
    pub cov_ratio: f64,
}

/// Control held at 10% of the way from the centre of the control box to its upper face.
pub fn probe_controls(inst: &OcpInstance, grid: &TimeGrid) -> Vec<DVector<f64>> {
    let m = inst.dims().m;
    let u = DVector::from_fn(m, |j, _| {
        let (lo, hi) = (inst.control_lower[j], inst.control_upper[j]);
        if lo.is_finite() && hi.is_finite() {
            lo + 0.55 * (hi - lo)
        } else {
            0.1
        }
    });
    vec![u; grid.stages()]
}

/// Linearises about the noise-free rollout under [`probe_controls`], propagates the moments
/// and compares them with `paths` Euler–Maruyama samples of the linearised SDE.
pub fn moment_audit(
    inst: &OcpInstance,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    k: f64,
) -> Result<MomentAudit, CliError> {
    let controls = probe_controls(inst, grid);
    let reference = nominal_rollout(inst, &controls, grid)?;
    let (coeffs, _) = linearize(inst, &reference, grid)?;
    let prop = propagate(&coeffs, &controls, &inst.x0, &inst.z0, grid)?;

    let mut lin = inst.clone();
    lin.dynamics = Arc::new(LtvDynamics::new(coeffs.clone(), grid));
    let mc = simulate_summary(&lin, &controls, grid, paths, seed, 0)?;
    let mo = mc.moments.ok_or(McError::Paths { needed: 2, got: paths })?;

    let h = grid.step();
    let m = paths as f64;
    let n_x = inst.dims().n_x;
    let mut em = DMatrix::zeros(n_x, n_x);
    let (mut mean_ratio, mut cov_ratio): (f64, f64) = (0.0, 0.0);
    for i in 0..grid.nodes() {
        if i > 0 {
            let c = &coeffs.nodes[i - 1];
            let phi = DMatrix::identity(n_x, n_x) + &c.a * h;
            let cc = c.diffusion(&prop.z[i - 1]);
            em = &phi * &em * phi.transpose() + &cc * cc.transpose() * h;
        }
        let s = &prop.sigma[i];
        for a in 0..n_x {
            let se = (s[(a, a)].max(0.0) / m).sqrt();
            let dev = (mo.mean[i][a] - prop.mu[i][a]).abs();
            mean_ratio = mean_ratio.max(dev / (k * se + 1e-12 * (1.0 + prop.mu[i][a].abs())));
            for b in a..n_x {
                let se = ((s[(a, a)] * s[(b, b)] + s[(a, b)].powi(2)).max(0.0) / m).sqrt();
                let bias = (s[(a, b)] - em[(a, b)]).abs();
                let dev = (mo.cov[i][(a, b)] - s[(a, b)]).abs();
                cov_ratio = cov_ratio.max(dev / (k * se + bias + 1e-14));
            }
        }
    }
    Ok(MomentAudit {
        mean_ratio,
        cov_ratio,
    })
}

/// Runs every audit on `inst`.
pub fn run_check(inst: &OcpInstance, grid: &TimeGrid, opts: &CheckOptions) -> Result<CheckReport, CliError> {
    inst.validate()?;
    let points = audit_points(inst, opts.jacobian_points, opts.seed);
    let mut rows = Vec::new();

    let jac = points
        .iter()
        .map(|p| {
            let scale = p.x.iter().chain(&p.z).chain(&p.u).fold(1.0f64, |a, v| a.max(v.abs()));
            check_jacobians(inst, p, 1e-5 * scale)
        })
        .fold(0.0, f64::max);
    rows.push(AuditRow {
        name: "jacobian",
        value: jac,
        threshold: opts.jacobian_tol,
        pass: jac < opts.jacobian_tol,
        detail: format!("{} points, central differences", points.len()),
    });

    let aff = control_affinity_defect(inst, &points);
    rows.push(AuditRow {
        name: "control-affine",
        value: aff,
        threshold: opts.affinity_tol,
        pass: aff < opts.affinity_tol,
        detail: "midpoint identity in u".into(),
    });

    let mom = moment_audit(inst, grid, opts.paths, opts.seed, opts.moment_se)?;
    rows.push(AuditRow {
        name: "moment-mean",
        value: mom.mean_ratio,
        threshold: 1.0,
        pass: mom.mean_ratio <= 1.0,
        detail: format!("{} paths, {} SE", opts.paths, opts.moment_se),
    });
    rows.push(AuditRow {
        name: "moment-covariance",
        value: mom.cov_ratio,
        threshold: 1.0,
        pass: mom.cov_ratio <= 1.0,
        detail: format!("{} paths, {} SE + Euler bias", opts.paths, opts.moment_se),
    });

    let guess = initial_guess(inst, grid);
    let (coeffs, cost) = linearize(inst, &guess, grid)?;
    let sub = build(inst, &coeffs, &cost, &guess, opts.delta0, grid)?;
    let (value, detail) = match sub.audit_convexity() {
        Ok(()) => (0.0, "subproblem at the initial guess".to_string()),
        Err(e) => (1.0, e.to_string()),
    };
    rows.push(AuditRow {
        name: "convexity",
        value,
        threshold: 0.0,
        pass: value == 0.0,
        detail,
    });
    Ok(CheckReport { rows })
}

pub fn cmd_check(a: &CheckArgs) -> Result<i32, CliError> {
    let (inst, grid) = load(&a.common)?;
    let opts = CheckOptions {
        paths: a.paths,
        seed: a.seed,
        ..CheckOptions::default()
    };
    let report = run_check(&inst, &grid, &opts)?;
    print!("{}", report.table());
    Ok(report.exit_code())
}
