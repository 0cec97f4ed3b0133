//! Envelope (profile) LDLᵀ factorization under a reverse Cuthill–McKee ordering.
//!
//! Works without pivoting for symmetric positive definite and for quasi-definite
//! matrices, which covers both linear systems the solver needs.

use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("zero or non-finite pivot {value} at position {index}")]
    BadPivot { index: usize, value: f64 },
}

/// Ordering and envelope layout for a fixed sparsity pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    len: usize,
}

impl Symbolic {
    /// Analyses the pattern given by the off-diagonal `edges` (old indices, either orientation).
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, list) in adj.iter().enumerate() {
            let i = iperm[old];
            for &nb in list {
                let j = iperm[nb];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut len = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(len);
            len += i - f + 1;
        }
        offset.push(len);
        Self {
            n,
            perm,
            iperm,
            first,
            offset,
            len,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in the envelope.
    pub fn envelope_len(&self) -> usize {
        self.len
    }
}

fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, &degree, seed);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Level-structure heuristic of George and Liu, restricted to the component of `seed`.
fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let (mut depth, mut last) = bfs_levels(adj, root);
    for _ in 0..8 {
        let candidate = *last
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .expect("non-empty last level");
        let (d, l) = bfs_levels(adj, candidate);
        if d > depth {
            root = candidate;
            depth = d;
            last = l;
        } else {
            break;
        }
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if level[w] == usize::MAX {
                    level[w] = depth + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// Numeric values on a [`Symbolic`] envelope, filled through [`EnvelopeMatrix::add`].
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    sym: Arc<Symbolic>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    pub fn zeros(sym: Arc<Symbolic>) -> Self {
        let data = vec![0.0; sym.len];
        Self { sym, data }
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`. Each off-diagonal pair must be
    /// added once, not once per triangle.
    ///
    /// Panics if the pair is outside the analysed pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = (self.sym.iperm[i], self.sym.iperm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let f = self.sym.first[r];
        assert!(c >= f, "entry ({i}, {j}) outside the envelope");
        self.data[self.sym.offset[r] + c - f] += v;
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        let r = self.sym.iperm[i];
        self.data[self.sym.offset[r] + r - self.sym.first[r]] += v;
    }

    pub fn factor(mut self) -> Result<LdlFactor, LdlError> {
        let sym = Arc::clone(&self.sym);
        let n = sym.n;
        let mut d = vec![0.0; n];
        let mut t = vec![0.0; n];
        for i in 0..n {
            let fi = sym.first[i];
            let oi = sym.offset[i];
            for j in fi..i {
                let fj = sym.first[j];
                let oj = sym.offset[j];
                let k0 = fi.max(fj);
                let mut s = self.data[oi + j - fi];
                for k in k0..j {
                    s -= t[k] * self.data[oj + k - fj];
                }
                t[j] = s;
                self.data[oi + j - fi] = s / d[j];
            }
            let mut di = self.data[oi + i - fi];
            for j in fi..i {
                di -= t[j] * self.data[oi + j - fi];
            }
            if !di.is_finite() || di.abs() < 1e-300 {
                return Err(LdlError::BadPivot { index: i, value: di });
            }
            d[i] = di;
            self.data[oi + i - fi] = di;
        }
        Ok(LdlFactor {
            sym,
            data: self.data,
            d,
        })
    }
}

/// `P A Pᵀ = L D Lᵀ` on the envelope.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    sym: Arc<Symbolic>,
    data: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Number of (positive, negative) pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.d.len() - pos)
    }

    pub fn min_pivot(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let sym = &self.sym;
        let n = sym.n;
        let mut y: Vec<f64> = sym.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = sym.first[i];
            let oi = sym.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[oi + k - fi] * y[k];
            }
            y[i] = s;
        }
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi /= di;
        }
        for i in (0..n).rev() {
            let fi = sym.first[i];
            let oi = sym.offset[i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[oi + k - fi] * yi;
            }
        }
        for (new, &old) in sym.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve_check(n: usize, dense: &[f64]) {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if dense[i * n + j] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        let sym = Arc::new(Symbolic::new(n, &edges));
        let mut m = EnvelopeMatrix::zeros(Arc::clone(&sym));
        for i in 0..n {
            m.add_diagonal(i, dense[i * n + i]);
            for j in 0..i {
                if dense[i * n + j] != 0.0 {
                    m.add(i, j, dense[i * n + j]);
                }
            }
        }
        let f = m.factor().unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| dense[i * n + j] * x_true[j]).sum())
            .collect();
        f.solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn tridiagonal_spd() {
        let n = 7;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 4.0;
            if i + 1 < n {
                a[i * n + i + 1] = -1.0;
                a[(i + 1) * n + i] = -1.0;
            }
        }
        dense_solve_check(n, &a);
    }

    #[test]
    fn quasi_definite_kkt() {
        // [[2, 0, 1], [0, 3, 1], [1, 1, -0.5]]
        let a = [2.0, 0.0, 1.0, 0.0, 3.0, 1.0, 1.0, 1.0, -0.5];
        dense_solve_check(3, &a);
    }

    #[test]
    fn disconnected_pattern() {
        let a = [5.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 1.0, 2.0];
        dense_solve_check(3, &a);
    }

    #[test]
    fn banded_ordering_keeps_envelope_small() {
        // a path graph given in scrambled labels must be recovered as a band
        let n = 50;
        let labels: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let edges: Vec<_> = (0..n - 1).map(|i| (labels[i], labels[i + 1])).collect();
        let sym = Symbolic::new(n, &edges);
        assert!(sym.envelope_len() <= 2 * n);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let sym = Arc::new(Symbolic::new(2, &[(0, 1)]));
        let mut m = EnvelopeMatrix::zeros(sym);
        m.add_diagonal(0, 1.0);
        m.add_diagonal(1, 1.0);
        m.add(0, 1, 1.0);
        assert!(matches!(m.factor(), Err(LdlError::BadPivot { .. })));
    }
}
