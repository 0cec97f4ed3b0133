//! Problem data: dynamics, costs, obstacles and the time grid.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("grid needs at least 2 nodes, got {0}")]
    Nodes(usize),
    #[error("obstacle {index} has non-positive radius {radius}")]
    Radius { index: usize, radius: f64 },
    #[error("clearance must be non-negative, got {0}")]
    Clearance(f64),
    #[error("penalty weight must be non-negative, got {0}")]
    PenaltyWeight(f64),
    #[error("control bound {index}: lower {lower} is not below upper {upper}")]
    ControlBounds { index: usize, lower: f64, upper: f64 },
    #[error("control cost weight {index} is negative or non-finite: {value}")]
    ControlWeight { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// State, control and noise dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Stochastic state block.
    pub n_x: usize,
    /// Deterministic state block.
    pub n_z: usize,
    pub m: usize,
    /// Brownian dimension.
    pub d: usize,
}

/// Column names used by the CSV writers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub u: Vec<String>,
}

impl Labels {
    pub fn generic(dims: Dims) -> Self {
        let seq = |p: &str, n| (0..n).map(|i| format!("{p}{i}")).collect();
        Self {
            x: seq("x", dims.n_x),
            z: seq("z", dims.n_z),
            u: seq("u", dims.m),
        }
    }
}

/// Jacobians of the stochastic-block drift.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftJacobian {
    pub dx: DMatrix<f64>,
    pub dz: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

/// Control-affine drift `(b^x(t,u,x,z), b^z(t,u,z))` with uncontrolled diffusion `σ(t,z)`.
///
/// The evaluators write into caller-provided buffers so Monte Carlo loops do not allocate.
/// Jacobians default to central finite differences; implementors with closed forms should
/// override them.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn dims(&self) -> Dims;

    fn labels(&self) -> Labels {
        Labels::generic(self.dims())
    }

    fn drift_x(&self, t: f64, u: &[f64], x: &[f64], z: &[f64], out: &mut [f64]);

    fn drift_z(&self, t: f64, u: &[f64], z: &[f64], out: &mut [f64]);

    /// Writes the `n_x × d` diffusion matrix in row-major order.
    fn diffusion(&self, t: f64, z: &[f64], out: &mut [f64]);

    fn drift_x_jacobian(&self, t: f64, u: &[f64], x: &[f64], z: &[f64]) -> DriftJacobian {
        fd_drift_x_jacobian(self, t, u, x, z)
    }

    /// Returns `(∂b^z/∂z, ∂b^z/∂u)`.
    fn drift_z_jacobian(&self, t: f64, u: &[f64], z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        fd_drift_z_jacobian(self, t, u, z)
    }

    /// `∂σ/∂z_j` for each `j`, each an `n_x × d` matrix.
    fn diffusion_jacobian(&self, t: f64, z: &[f64]) -> Vec<DMatrix<f64>> {
        fd_diffusion_jacobian(self, t, z)
    }
}

pub(crate) fn fd_step(point: &[f64]) -> f64 {
    let norm = point.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * norm.max(1.0)
}

/// Central differences of `f: ℝⁿ → ℝᵐ` at `p`, column by column.
pub(crate) fn central_difference(
    p: &[f64],
    rows: usize,
    step: f64,
    mut f: impl FnMut(&[f64], &mut [f64]),
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, p.len());
    let mut q = p.to_vec();
    let mut plus = vec![0.0; rows];
    let mut minus = vec![0.0; rows];
    for j in 0..p.len() {
        q[j] = p[j] + step;
        f(&q, &mut plus);
        q[j] = p[j] - step;
        f(&q, &mut minus);
        q[j] = p[j];
        for r in 0..rows {
            jac[(r, j)] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }
    jac
}

pub fn fd_drift_x_jacobian<D: Dynamics + ?Sized>(
    dyn_: &D,
    t: f64,
    u: &[f64],
    x: &[f64],
    z: &[f64],
) -> DriftJacobian {
    let n = dyn_.dims().n_x;
    let mut all = Vec::with_capacity(u.len() + x.len() + z.len());
    all.extend_from_slice(u);
    all.extend_from_slice(x);
    all.extend_from_slice(z);
    let step = fd_step(&all);
    DriftJacobian {
        dx: central_difference(x, n, step, |q, out| dyn_.drift_x(t, u, q, z, out)),
        dz: central_difference(z, n, step, |q, out| dyn_.drift_x(t, u, x, q, out)),
        du: central_difference(u, n, step, |q, out| dyn_.drift_x(t, q, x, z, out)),
    }
}

pub fn fd_drift_z_jacobian<D: Dynamics + ?Sized>(
    dyn_: &D,
    t: f64,
    u: &[f64],
    z: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = dyn_.dims().n_z;
    let mut all = u.to_vec();
    all.extend_from_slice(z);
    let step = fd_step(&all);
    (
        central_difference(z, n, step, |q, out| dyn_.drift_z(t, u, q, out)),
        central_difference(u, n, step, |q, out| dyn_.drift_z(t, q, z, out)),
    )
}

pub fn fd_diffusion_jacobian<D: Dynamics + ?Sized>(dyn_: &D, t: f64, z: &[f64]) -> Vec<DMatrix<f64>> {
    let Dims { n_x, d, .. } = dyn_.dims();
    let step = fd_step(z);
    let flat = central_difference(z, n_x * d, step, |q, out| dyn_.diffusion(t, q, out));
    (0..z.len())
        .map(|j| DMatrix::from_row_slice(n_x, d, flat.column(j).as_slice()))
        .collect()
}

/// Unicycle with slip noise: `x = (r_x, r_y, θ)`, `z = (v, ω)`, `u = (a_v, a_ω)`, and
/// diffusion `diag(α²ωv, α²ωv, β²ωv)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Car {
    pub alpha2: f64,
    pub beta2: f64,
}

impl Dynamics for Car {
    fn dims(&self) -> Dims {
        Dims {
            n_x: 3,
            n_z: 2,
            m: 2,
            d: 3,
        }
    }

    fn labels(&self) -> Labels {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Labels {
            x: s(&["rx", "ry", "theta"]),
            z: s(&["v", "omega"]),
            u: s(&["a_v", "a_omega"]),
        }
    }

    fn drift_x(&self, _t: f64, _u: &[f64], x: &[f64], z: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        out[0] = z[0] * c;
        out[1] = z[0] * s;
        out[2] = z[1];
    }

    fn drift_z(&self, _t: f64, u: &[f64], _z: &[f64], out: &mut [f64]) {
        out[0] = u[0];
        out[1] = u[1];
    }

    fn diffusion(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        let wv = z[0] * z[1];
        out.fill(0.0);
        out[0] = self.alpha2 * wv;
        out[4] = self.alpha2 * wv;
        out[8] = self.beta2 * wv;
    }

    fn drift_x_jacobian(&self, _t: f64, _u: &[f64], x: &[f64], z: &[f64]) -> DriftJacobian {
        let (s, c) = x[2].sin_cos();
        let v = z[0];
        DriftJacobian {
            dx: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -v * s, 0.0, 0.0, v * c, 0.0, 0.0, 0.0]),
            dz: DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0]),
            du: DMatrix::zeros(3, 2),
        }
    }

    fn drift_z_jacobian(&self, _t: f64, _u: &[f64], _z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::zeros(2, 2), DMatrix::identity(2, 2))
    }

    fn diffusion_jacobian(&self, _t: f64, z: &[f64]) -> Vec<DMatrix<f64>> {
        let diag = |w: f64| {
            DMatrix::from_diagonal(&DVector::from_column_slice(&[
                self.alpha2 * w,
                self.alpha2 * w,
                self.beta2 * w,
            ]))
        };
        vec![diag(z[1]), diag(z[0])]
    }
}

/// Time-invariant affine dynamics
/// `dx = (A x + A_z z + B u + b) dt + C dB`, `dz = (D z + E u + e) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub az: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_off: DVector<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub e_off: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl LinearModel {
    /// All-zero model of the given dimensions.
    pub fn zeros(dims: Dims) -> Self {
        let Dims { n_x, n_z, m, d } = dims;
        Self {
            a: DMatrix::zeros(n_x, n_x),
            az: DMatrix::zeros(n_x, n_z),
            b: DMatrix::zeros(n_x, m),
            b_off: DVector::zeros(n_x),
            d: DMatrix::zeros(n_z, n_z),
            e: DMatrix::zeros(n_z, m),
            e_off: DVector::zeros(n_z),
            c: DMatrix::zeros(n_x, d),
        }
    }

    /// Scalar `dx = −κ x dt + s dB` with an inert one-dimensional `z` and control.
    pub fn ornstein_uhlenbeck(kappa: f64, s: f64) -> Self {
        let mut m = Self::zeros(Dims {
            n_x: 1,
            n_z: 1,
            m: 1,
            d: 1,
        });
        m.a[(0, 0)] = -kappa;
        m.c[(0, 0)] = s;
        m
    }

    /// Double integrator in the plane, `x = (position, velocity)` per axis pair, driven
    /// through a first-order actuator `z`: `ṗ = v`, `v̇ = z`, `ż = u − z`, with constant noise
    /// of intensity `s` on the velocities.
    pub fn actuated_double_integrator(s: f64) -> Self {
        let mut m = Self::zeros(Dims {
            n_x: 2,
            n_z: 1,
            m: 1,
            d: 1,
        });
        m.a[(0, 1)] = 1.0;
        m.az[(1, 0)] = 1.0;
        m.d[(0, 0)] = -1.0;
        m.e[(0, 0)] = 1.0;
        m.c[(1, 0)] = s;
        m
    }
}

impl Dynamics for LinearModel {
    fn dims(&self) -> Dims {
        Dims {
            n_x: self.a.nrows(),
            n_z: self.d.nrows(),
            m: self.b.ncols(),
            d: self.c.ncols(),
        }
    }

    fn drift_x(&self, _t: f64, u: &[f64], x: &[f64], z: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.b_off[r];
            for (j, xj) in x.iter().enumerate() {
                acc += self.a[(r, j)] * xj;
            }
            for (j, zj) in z.iter().enumerate() {
                acc += self.az[(r, j)] * zj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += self.b[(r, j)] * uj;
            }
            *o = acc;
        }
    }

    fn drift_z(&self, _t: f64, u: &[f64], z: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.e_off[r];
            for (j, zj) in z.iter().enumerate() {
                acc += self.d[(r, j)] * zj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += self.e[(r, j)] * uj;
            }
            *o = acc;
        }
    }

    fn diffusion(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        let d = self.c.ncols();
        for r in 0..self.c.nrows() {
            for j in 0..d {
                out[r * d + j] = self.c[(r, j)];
            }
        }
    }

    fn drift_x_jacobian(&self, _t: f64, _u: &[f64], _x: &[f64], _z: &[f64]) -> DriftJacobian {
        DriftJacobian {
            dx: self.a.clone(),
            dz: self.az.clone(),
            du: self.b.clone(),
        }
    }

    fn drift_z_jacobian(&self, _t: f64, _u: &[f64], _z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.d.clone(), self.e.clone())
    }

    fn diffusion_jacobian(&self, _t: f64, _z: &[f64]) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.c.nrows(), self.c.ncols()); self.d.nrows()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// How the obstacle potential enters the running cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltySign {
    /// `λ·Σ(‖r−r_o‖² − (δ_o+ε)²)` inside the inflated disks; negative there, so minimising it
    /// pulls trajectories inwards.
    AsPrinted,
    /// `λ·Σ((δ_o+ε)² − ‖r−r_o‖²)`, which pushes trajectories out.
    #[default]
    Repulsive,
}

impl PenaltySign {
    pub fn factor(self) -> f64 {
        match self {
            Self::AsPrinted => 1.0,
            Self::Repulsive => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSet {
    pub obstacles: Vec<Obstacle>,
    /// Extra margin ε added to every radius in the penalty (not in collision checks).
    pub clearance: f64,
    /// Penalty weight λ.
    pub weight: f64,
    /// Indices of `(r_x, r_y)` within the stochastic state.
    pub position_index: [usize; 2],
}

impl ObstacleSet {
    pub fn empty() -> Self {
        Self {
            obstacles: Vec::new(),
            clearance: 0.0,
            weight: 0.0,
            position_index: [0, 1],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (index, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !o.radius.is_finite() {
                return Err(ModelError::Radius {
                    index,
                    radius: o.radius,
                });
            }
            if !o.center.iter().all(|c| c.is_finite()) {
                return Err(ModelError::NonFinite("obstacle center"));
            }
        }
        if !(self.clearance >= 0.0) || !self.clearance.is_finite() {
            return Err(ModelError::Clearance(self.clearance));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(ModelError::PenaltyWeight(self.weight));
        }
        Ok(())
    }

    pub fn position(&self, x: &[f64]) -> [f64; 2] {
        [x[self.position_index[0]], x[self.position_index[1]]]
    }

    /// Whether `r` lies strictly inside a physical (uninflated) disk.
    pub fn collides(&self, r: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| {
            let dx = r[0] - o.center[0];
            let dy = r[1] - o.center[1];
            dx * dx + dy * dy < o.radius * o.radius
        })
    }
}

/// `Σ_o (‖r − r_o‖² − (δ_o+ε)²)` over the inflated disks containing `r`; zero outside them.
pub fn eval_obstacle_potential(obs: &ObstacleSet, r: [f64; 2]) -> f64 {
    obs.obstacles
        .iter()
        .map(|o| {
            let reach = o.radius + obs.clearance;
            let d2 = (r[0] - o.center[0]).powi(2) + (r[1] - o.center[1]).powi(2);
            if d2 < reach * reach {
                d2 - reach * reach
            } else {
                0.0
            }
        })
        .sum()
}

fn obstacle_potential_gradient(obs: &ObstacleSet, r: [f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for o in &obs.obstacles {
        let reach = o.radius + obs.clearance;
        let dx = r[0] - o.center[0];
        let dy = r[1] - o.center[1];
        if dx * dx + dy * dy < reach * reach {
            g[0] += 2.0 * dx;
            g[1] += 2.0 * dy;
        }
    }
    g
}

/// `G(u) = Σ_j w_j u_j²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCost {
    pub weights: DVector<f64>,
}

impl ControlCost {
    /// `‖u‖²`.
    pub fn unit(m: usize) -> Self {
        Self {
            weights: DVector::from_element(m, 1.0),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.weights.iter().zip(u).map(|(w, v)| w * v * v).sum()
    }
}

/// Uniform grid `t_i = i·h`, `h = t_f/(N−1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    nodes: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(nodes: usize, horizon: f64) -> Result<Self, ModelError> {
        if nodes < 2 {
            return Err(ModelError::Nodes(nodes));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ModelError::Horizon(horizon));
        }
        Ok(Self { nodes, horizon })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn stages(&self) -> usize {
        self.nodes - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.nodes - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }
}

/// Fixed-horizon stochastic optimal control problem with terminal mean constraint.
#[derive(Clone)]
pub struct OcpInstance {
    pub dynamics: Arc<dyn Dynamics>,
    pub horizon: f64,
    pub control_cost: ControlCost,
    pub obstacles: ObstacleSet,
    pub penalty_sign: PenaltySign,
    pub control_lower: DVector<f64>,
    pub control_upper: DVector<f64>,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    pub goal_x: DVector<f64>,
    pub goal_z: DVector<f64>,
    /// Weight of `tr Σ` in the running cost.
    pub variance_weight: f64,
}

impl fmt::Debug for OcpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpInstance")
            .field("dynamics", &self.dynamics)
            .field("horizon", &self.horizon)
            .field("obstacles", &self.obstacles.obstacles.len())
            .field("goal_x", &self.goal_x.as_slice())
            .finish_non_exhaustive()
    }
}

impl OcpInstance {
    /// Instance with unit control cost, no obstacles, unbounded controls and zero start/goal.
    pub fn new(dynamics: Arc<dyn Dynamics>, horizon: f64) -> Self {
        let Dims { n_x, n_z, m, .. } = dynamics.dims();
        Self {
            dynamics,
            horizon,
            control_cost: ControlCost::unit(m),
            obstacles: ObstacleSet::empty(),
            penalty_sign: PenaltySign::default(),
            control_lower: DVector::from_element(m, f64::NEG_INFINITY),
            control_upper: DVector::from_element(m, f64::INFINITY),
            x0: DVector::zeros(n_x),
            z0: DVector::zeros(n_z),
            goal_x: DVector::zeros(n_x),
            goal_z: DVector::zeros(n_z),
            variance_weight: 1.0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dynamics.dims()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let Dims { n_x, n_z, m, d } = self.dims();
        for (what, expected, got) in [
            ("x0", n_x, self.x0.len()),
            ("z0", n_z, self.z0.len()),
            ("goal_x", n_x, self.goal_x.len()),
            ("goal_z", n_z, self.goal_z.len()),
            ("control lower bound", m, self.control_lower.len()),
            ("control upper bound", m, self.control_upper.len()),
            ("control cost weights", m, self.control_cost.weights.len()),
        ] {
            if expected != got {
                return Err(ModelError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        if n_x == 0 || n_z == 0 || m == 0 || d == 0 {
            return Err(ModelError::Dimension {
                what: "state, control and noise dimensions (must be ≥ 1)",
                expected: 1,
                got: 0,
            });
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ModelError::Horizon(self.horizon));
        }
        for index in 0..m {
            let (lower, upper) = (self.control_lower[index], self.control_upper[index]);
            if lower.is_nan() || upper.is_nan() || lower >= upper {
                return Err(ModelError::ControlBounds {
                    index,
                    lower,
                    upper,
                });
            }
        }
        for (index, &value) in self.control_cost.weights.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ModelError::ControlWeight { index, value });
            }
        }
        if [&self.x0, &self.z0, &self.goal_x, &self.goal_z]
            .iter()
            .any(|v| v.iter().any(|e| !e.is_finite()))
        {
            return Err(ModelError::NonFinite("initial or goal state"));
        }
        if !self.variance_weight.is_finite() || self.variance_weight < 0.0 {
            return Err(ModelError::NonFinite("variance weight"));
        }
        self.obstacles.validate()?;
        if !self.obstacles.obstacles.is_empty() && self.obstacles.position_index.iter().any(|&i| i >= n_x) {
            return Err(ModelError::Dimension {
                what: "obstacle position index",
                expected: n_x,
                got: self.obstacles.position_index.iter().copied().max().unwrap_or(0) + 1,
            });
        }
        Ok(())
    }

    /// Running state penalty `L₀(t, x)`.
    pub fn state_penalty(&self, _t: f64, x: &[f64]) -> f64 {
        if self.obstacles.obstacles.is_empty() {
            return 0.0;
        }
        let r = self.obstacles.position(x);
        self.obstacles.weight * self.penalty_sign.factor() * eval_obstacle_potential(&self.obstacles, r)
    }

    /// `∂L₀/∂x`.
    pub fn state_penalty_gradient(&self, _t: f64, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        if self.obstacles.obstacles.is_empty() {
            return g;
        }
        let r = self.obstacles.position(x);
        let pg = obstacle_potential_gradient(&self.obstacles, r);
        let s = self.obstacles.weight * self.penalty_sign.factor();
        let [ix, iy] = self.obstacles.position_index;
        g[ix] = s * pg[0];
        g[iy] = s * pg[1];
        g
    }
}

/// Evaluates both drift blocks after checking dimensions.
pub fn eval_drift(
    inst: &OcpInstance,
    t: f64,
    u: &[f64],
    x: &[f64],
    z: &[f64],
) -> Result<(DVector<f64>, DVector<f64>), ModelError> {
    let Dims { n_x, n_z, m, .. } = inst.dims();
    for (what, expected, got) in [("u", m, u.len()), ("x", n_x, x.len()), ("z", n_z, z.len())] {
        if expected != got {
            return Err(ModelError::Dimension {
                what,
                expected,
                got,
            });
        }
    }
    let mut dx = DVector::zeros(n_x);
    let mut dz = DVector::zeros(n_z);
    inst.dynamics.drift_x(t, u, x, z, dx.as_mut_slice());
    inst.dynamics.drift_z(t, u, z, dz.as_mut_slice());
    Ok((dx, dz))
}
