//! Euler–Maruyama sample paths of the original non-linear SDE.
//!
//! Path `k` draws its Gaussian increments from a ChaCha20 stream selected by `k` under the
//! master seed, so every path is a pure function of `(seed, k)` and results do not depend on
//! how paths are scheduled across threads. Statistics are accumulated over fixed blocks of
//! paths and combined in block order for the same reason.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ObstacleSet, OcpInstance, TimeGrid};

/// Identifier of the random number pipeline, recorded in simulation outputs.
pub const RNG_ALGORITHM: &str = "chacha20(seed, stream=path)+standard-normal-ziggurat";

const BLOCK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("need at least {needed} paths, got {got}")]
    Paths { needed: usize, got: usize },
    #[error("expected {expected} controls of dimension {m}, got {got}")]
    Controls { expected: usize, m: usize, got: usize },
    #[error("non-finite state on path {path} at node {node}")]
    NonFinite { path: usize, node: usize },
}

/// Deterministic quantities shared by all paths.
struct Setup<'a> {
    inst: &'a OcpInstance,
    grid: TimeGrid,
    controls: &'a [DVector<f64>],
    z: Vec<DVector<f64>>,
    /// `σ(t_i, z_i)·√h`, row-major.
    noise: Vec<Vec<f64>>,
    seed: u64,
}

impl<'a> Setup<'a> {
    fn new(
        inst: &'a OcpInstance,
        controls: &'a [DVector<f64>],
        grid: &TimeGrid,
        seed: u64,
    ) -> Result<Self, McError> {
        let dims = inst.dims();
        if controls.len() + 1 != grid.nodes() || controls.iter().any(|u| u.len() != dims.m) {
            return Err(McError::Controls {
                expected: grid.stages(),
                m: dims.m,
                got: controls.len(),
            });
        }
        let h = grid.step();
        let mut z = vec![inst.z0.clone()];
        let mut rate = vec![0.0; dims.n_z];
        let mut noise = Vec::with_capacity(grid.stages());
        let mut sig = vec![0.0; dims.n_x * dims.d];
        for i in 0..grid.stages() {
            let t = grid.time(i);
            inst.dynamics.drift_z(t, controls[i].as_slice(), z[i].as_slice(), &mut rate);
            inst.dynamics.diffusion(t, z[i].as_slice(), &mut sig);
            noise.push(sig.iter().map(|s| s * h.sqrt()).collect());
            let next = &z[i] + DVector::from_column_slice(&rate) * h;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(McError::NonFinite { path: 0, node: i + 1 });
            }
            z.push(next);
        }
        Ok(Self {
            inst,
            grid: *grid,
            controls,
            z,
            noise,
            seed,
        })
    }

    fn rng(&self, path: usize) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        rng
    }

    /// Fills `out` (`N × n_x`) with path `k`.
    fn path(&self, k: usize, rng: &mut ChaCha20Rng, out: &mut [f64]) -> Result<(), McError> {
        let dims = self.inst.dims();
        let (n_x, d) = (dims.n_x, dims.d);
        let h = self.grid.step();
        let mut rate = vec![0.0; n_x];
        let mut xi = vec![0.0; d];
        out[..n_x].copy_from_slice(self.inst.x0.as_slice());
        for i in 0..self.grid.stages() {
            for v in xi.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let (head, tail) = out.split_at_mut((i + 1) * n_x);
            let x = &head[i * n_x..];
            let next = &mut tail[..n_x];
            self.inst.dynamics.drift_x(
                self.grid.time(i),
                self.controls[i].as_slice(),
                x,
                self.z[i].as_slice(),
                &mut rate,
            );
            let s = &self.noise[i];
            for r in 0..n_x {
                let mut v = x[r] + h * rate[r];
                for j in 0..d {
                    v += s[r * d + j] * xi[j];
                }
                if !v.is_finite() {
                    return Err(McError::NonFinite { path: k, node: i + 1 });
                }
                next[r] = v;
            }
        }
        Ok(())
    }
}

/// All sample paths, stored path-major as `[path][node][state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePathEnsemble {
    pub grid: TimeGrid,
    pub n_x: usize,
    pub paths: usize,
    pub seed: u64,
    pub states: Vec<f64>,
    /// Deterministic block, identical for every path.
    pub z: Vec<DVector<f64>>,
}

impl SamplePathEnsemble {
    pub fn path(&self, k: usize) -> &[f64] {
        let len = self.grid.nodes() * self.n_x;
        &self.states[k * len..(k + 1) * len]
    }

    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        &self.path(k)[i * self.n_x..(i + 1) * self.n_x]
    }
}

fn simulate_impl(
    inst: &OcpInstance,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    parallel: bool,
) -> Result<SamplePathEnsemble, McError> {
    if paths == 0 {
        return Err(McError::Paths { needed: 1, got: 0 });
    }
    let setup = Setup::new(inst, controls, grid, seed)?;
    let n_x = inst.dims().n_x;
    let len = grid.nodes() * n_x;
    let mut states = vec![0.0; paths * len];
    let run = |(k, out): (usize, &mut [f64])| setup.path(k, &mut setup.rng(k), out);
    if parallel {
        states.par_chunks_mut(len).enumerate().try_for_each(run)?;
    } else {
        states.chunks_mut(len).enumerate().try_for_each(run)?;
    }
    Ok(SamplePathEnsemble {
        grid: *grid,
        n_x,
        paths,
        seed,
        states,
        z: setup.z,
    })
}

/// Simulates `paths` Euler–Maruyama paths in parallel.
pub fn simulate(
    inst: &OcpInstance,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<SamplePathEnsemble, McError> {
    simulate_impl(inst, controls, grid, paths, seed, true)
}

/// Same as [`simulate`] on the calling thread only.
pub fn simulate_serial(
    inst: &OcpInstance,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<SamplePathEnsemble, McError> {
    simulate_impl(inst, controls, grid, paths, seed, false)
}

fn path_collides(obs: &ObstacleSet, path: &[f64], n_x: usize) -> Option<usize> {
    path.chunks(n_x).position(|x| obs.collides(obs.position(x)))
}

/// Fraction of paths that enter a physical obstacle disk at some node.
pub fn collision_rate(ens: &SamplePathEnsemble, obs: &ObstacleSet) -> f64 {
    if obs.obstacles.is_empty() {
        return 0.0;
    }
    let hits = (0..ens.paths)
        .filter(|&k| path_collides(obs, ens.path(k), ens.n_x).is_some())
        .count();
    hits as f64 / ens.paths as f64
}

/// Per-node sample mean and unbiased sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Sums of shifted states and their outer products over a block of paths.
#[derive(Debug, Clone)]
struct Sums {
    count: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Sums {
    fn new(nodes: usize, n_x: usize) -> Self {
        Self {
            count: 0,
            first: vec![0.0; nodes * n_x],
            second: vec![0.0; nodes * n_x * n_x],
        }
    }

    fn add(&mut self, path: &[f64], shift: &[f64], n_x: usize) {
        self.count += 1;
        for (i, (x, c)) in path.chunks(n_x).zip(shift.chunks(n_x)).enumerate() {
            for a in 0..n_x {
                let da = x[a] - c[a];
                self.first[i * n_x + a] += da;
                for b in 0..n_x {
                    self.second[(i * n_x + a) * n_x + b] += da * (x[b] - c[b]);
                }
            }
        }
    }

    fn merge(&mut self, other: &Sums) {
        self.count += other.count;
        self.first.iter_mut().zip(&other.first).for_each(|(a, b)| *a += b);
        self.second.iter_mut().zip(&other.second).for_each(|(a, b)| *a += b);
    }

    fn moments(&self, shift: &[f64], nodes: usize, n_x: usize) -> Moments {
        let m = self.count as f64;
        let mut mean = Vec::with_capacity(nodes);
        let mut cov = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let s1 = &self.first[i * n_x..(i + 1) * n_x];
            mean.push(DVector::from_fn(n_x, |a, _| shift[i * n_x + a] + s1[a] / m));
            cov.push(DMatrix::from_fn(n_x, n_x, |a, b| {
                (self.second[(i * n_x + a) * n_x + b] - s1[a] * s1[b] / m) / (m - 1.0)
            }));
        }
        Moments { mean, cov }
    }
}

pub fn empirical_moments(ens: &SamplePathEnsemble) -> Result<Moments, McError> {
    if ens.paths < 2 {
        return Err(McError::Paths {
            needed: 2,
            got: ens.paths,
        });
    }
    let nodes = ens.grid.nodes();
    let shift = ens.path(0);
    let blocks: Vec<Sums> = (0..ens.paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut s = Sums::new(nodes, ens.n_x);
            for k in b * BLOCK..((b + 1) * BLOCK).min(ens.paths) {
                s.add(ens.path(k), shift, ens.n_x);
            }
            s
        })
        .collect();
    let mut total = Sums::new(nodes, ens.n_x);
    blocks.iter().for_each(|b| total.merge(b));
    Ok(total.moments(shift, nodes, ens.n_x))
}

/// Streaming statistics of an ensemble too large to keep in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub seed: u64,
    /// Absent for a single path.
    pub moments: Option<Moments>,
    pub collisions: usize,
    pub collision_rate: f64,
    /// Paths whose first collision happens at each node.
    pub first_collision: Vec<usize>,
    /// The first few paths, `N × n_x` each.
    pub kept: Vec<Vec<f64>>,
    pub z: Vec<DVector<f64>>,
}

/// Simulates in blocks and keeps only moments, collision counts and the first `keep` paths.
/// Agrees exactly with [`simulate`] followed by [`empirical_moments`] and [`collision_rate`].
pub fn simulate_summary(
    inst: &OcpInstance,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    keep: usize,
) -> Result<EnsembleSummary, McError> {
    if paths == 0 {
        return Err(McError::Paths { needed: 1, got: 0 });
    }
    let setup = Setup::new(inst, controls, grid, seed)?;
    let n_x = inst.dims().n_x;
    let nodes = grid.nodes();
    let len = nodes * n_x;
    let obs = &inst.obstacles;

    let mut shift = vec![0.0; len];
    setup.path(0, &mut setup.rng(0), &mut shift)?;

    struct Block {
        sums: Sums,
        first_collision: Vec<usize>,
        kept: Vec<Vec<f64>>,
    }
    let blocks: Vec<Block> = (0..paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| -> Result<Block, McError> {
            let mut out = Block {
                sums: Sums::new(nodes, n_x),
                first_collision: vec![0; nodes],
                kept: Vec::new(),
            };
            let mut buf = vec![0.0; len];
            for k in b * BLOCK..((b + 1) * BLOCK).min(paths) {
                setup.path(k, &mut setup.rng(k), &mut buf)?;
                out.sums.add(&buf, &shift, n_x);
                if !obs.obstacles.is_empty() {
                    if let Some(i) = path_collides(obs, &buf, n_x) {
                        out.first_collision[i] += 1;
                    }
                }
                if k < keep {
                    out.kept.push(buf.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut sums = Sums::new(nodes, n_x);
    let mut first_collision = vec![0; nodes];
    let mut kept = Vec::new();
    for b in blocks {
        sums.merge(&b.sums);
        first_collision.iter_mut().zip(&b.first_collision).for_each(|(a, c)| *a += c);
        kept.extend(b.kept);
    }
    let collisions: usize = first_collision.iter().sum();
    Ok(EnsembleSummary {
        paths,
        seed,
        moments: (paths >= 2).then(|| sums.moments(&shift, nodes, n_x)),
        collisions,
        collision_rate: collisions as f64 / paths as f64,
        first_collision,
        kept,
        z: setup.z,
    })
}

/// `(∫‖u1 − u2‖ dt, E[max_i ‖x1_i − x2_i‖²])`, the expectation over `paths` pairs of paths
/// driven by common random numbers.
pub fn continuity_probe(
    inst: &OcpInstance,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64), McError> {
    if paths == 0 {
        return Err(McError::Paths { needed: 1, got: 0 });
    }
    let a = Setup::new(inst, u1, grid, seed)?;
    let b = Setup::new(inst, u2, grid, seed)?;
    let n_x = inst.dims().n_x;
    let len = grid.nodes() * n_x;
    let h = grid.step();
    let control_gap: f64 = u1.iter().zip(u2).map(|(p, q)| h * (p - q).norm()).sum();
    let gaps: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|k| -> Result<f64, McError> {
            let mut xa = vec![0.0; len];
            let mut xb = vec![0.0; len];
            a.path(k, &mut a.rng(k), &mut xa)?;
            b.path(k, &mut b.rng(k), &mut xb)?;
            Ok(xa
                .chunks(n_x)
                .zip(xb.chunks(n_x))
                .map(|(p, q)| p.iter().zip(q).map(|(s, t)| (s - t).powi(2)).sum::<f64>())
                .fold(0.0, f64::max))
        })
        .collect::<Result<_, _>>()?;
    Ok((control_gap, gaps.iter().sum::<f64>() / paths as f64))
}
