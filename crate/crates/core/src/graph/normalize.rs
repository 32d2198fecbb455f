//! Symmetric normalization `D̃^{-1/2} (A + I) D̃^{-1/2}` of the square block
//! embedding of a bipartite adjacency.
//!
//! Node `u < m` is user `u` and node `m + v` is item `v`. The user–item
//! weights fill both off-diagonal blocks, so the matrix is symmetric; the
//! identity adds a self-loop to every node, which keeps every degree positive.

use super::bipartite::BipartiteGraph;
use crate::numerics::tensor::dot;

/// Sparse (CSR) symmetric normalized adjacency.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    /// Entries of `D̃^{-1/2} Ã D̃^{-1/2}`.
    vals: Vec<f64>,
    deg: Vec<f64>,
    inv_sqrt_deg: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Builds from user–item weights `(user, item, w)`; duplicate pairs sum.
    pub fn from_weights(m: usize, n: usize, weights: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let size = m + n;
        let mut triplets: Vec<(usize, usize, f64)> = (0..size).map(|i| (i, i, 1.0)).collect();
        for (u, v, w) in weights {
            if w == 0.0 {
                continue;
            }
            triplets.push((u, m + v, w));
            triplets.push((m + v, u, w));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0; size + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut tilde: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in triplets {
            if last == Some((r, c)) {
                *tilde.last_mut().unwrap() += w;
            } else {
                cols.push(c);
                tilde.push(w);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..size {
            row_ptr[i + 1] += row_ptr[i];
        }
        let deg: Vec<f64> = (0..size).map(|i| tilde[row_ptr[i]..row_ptr[i + 1]].iter().sum()).collect();
        let inv_sqrt_deg: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut vals = vec![0.0; tilde.len()];
        for i in 0..size {
            for k in row_ptr[i]..row_ptr[i + 1] {
                vals[k] = tilde[k] / (deg[i] * deg[cols[k]]).sqrt();
            }
        }
        Self { m, n, row_ptr, cols, vals, deg, inv_sqrt_deg }
    }

    /// Base graph plus a dense `users.len() × n` block of extra weights on
    /// the listed user rows.
    pub fn with_augmentation(g: &BipartiteGraph, users: &[usize], block: &[f64]) -> Self {
        let n = g.n_items();
        assert_eq!(block.len(), users.len() * n, "augmentation block shape");
        let base = g.edges().map(|((u, v), w)| (u, v, w as f64));
        let extra = users
            .iter()
            .enumerate()
            .flat_map(move |(i, &u)| (0..n).map(move |j| (u, j, block[i * n + j])));
        Self::from_weights(g.n_users(), n, base.chain(extra))
    }

    pub fn n_nodes(&self) -> usize {
        self.m + self.n
    }

    pub fn n_users(&self) -> usize {
        self.m
    }

    pub fn n_items(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Weighted degree of `node` in `Ã`.
    pub fn degree(&self, node: usize) -> f64 {
        self.deg[node]
    }

    /// Normalized entry `(row, col)`, zero when absent.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Dense row-major copy, for inspection and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let size = self.n_nodes();
        let mut d = vec![0.0; size * size];
        for i in 0..size {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i * size + self.cols[k]] = self.vals[k];
            }
        }
        d
    }

    /// `out += Â · x` with `x` a row-major `n_nodes × c` buffer.
    pub fn spmm_acc(&self, x: &[f64], c: usize, out: &mut [f64]) {
        for i in 0..self.n_nodes() {
            let dst = &mut out[i * c..(i + 1) * c];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.vals[k];
                let src = &x[self.cols[k] * c..(self.cols[k] + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Gradient of a loss through `Y = Â · M` with respect to extra weights
    /// `r[u, j]` added symmetrically at `(u, m + j)` for the listed users,
    /// given `G = ∂L/∂Y`.
    ///
    /// With `s = d^{-1/2}` and `Â_ab = s_a Ã_ab s_b`:
    ///
    /// ```text
    /// ∂L/∂d_a   = −½ s_a² (G_a · (ÂM)_a + M_a · (ÂG)_a)
    /// ∂L/∂r_uj  = s_u s_J (G_u · M_J + G_J · M_u) + ∂L/∂d_u + ∂L/∂d_J,   J = m + j
    /// ```
    pub fn augmentation_gradient(&self, users: &[usize], g: &[f64], x: &[f64], c: usize) -> Vec<f64> {
        let size = self.n_nodes();
        let mut ay = vec![0.0; size * c];
        self.spmm_acc(x, c, &mut ay);
        let mut ag = vec![0.0; size * c];
        self.spmm_acc(g, c, &mut ag);
        let d_deg: Vec<f64> = (0..size)
            .map(|a| {
                let s = self.inv_sqrt_deg[a];
                let row = a * c..(a + 1) * c;
                -0.5 * s * s * (dot(&g[row.clone()], &ay[row.clone()]) + dot(&x[row.clone()], &ag[row]))
            })
            .collect();

        let (m, n) = (self.m, self.n);
        let nu = users.len();
        let mut gu = Vec::with_capacity(nu * c);
        let mut xu = Vec::with_capacity(nu * c);
        for &u in users {
            gu.extend_from_slice(&g[u * c..(u + 1) * c]);
            xu.extend_from_slice(&x[u * c..(u + 1) * c]);
        }
        let gi = &g[m * c..];
        let xi = &x[m * c..];
        let mut out = vec![0.0; nu * n];
        crate::numerics::tensor::gemm(&gu, nu, c, false, xi, n, c, true, &mut out, 0.0);
        crate::numerics::tensor::gemm(&xu, nu, c, false, gi, n, c, true, &mut out, 1.0);
        for (i, &u) in users.iter().enumerate() {
            let su = self.inv_sqrt_deg[u];
            for j in 0..n {
                let big_j = m + j;
                let o = &mut out[i * n + j];
                *o = su * self.inv_sqrt_deg[big_j] * *o + d_deg[u] + d_deg[big_j];
            }
        }
        out
    }
}

pub fn normalize_adjacency(g: &BipartiteGraph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_weights(g.n_users(), g.n_items(), g.edges().map(|((u, v), w)| (u, v, w as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, ActionRecord};
    use crate::numerics::Tensor;

    fn graph(m: usize, n: usize, acts: &[(usize, usize)]) -> BipartiteGraph {
        let acts: Vec<_> = acts.iter().map(|&(u, v)| ActionRecord::new(u, v, 0)).collect();
        build_graph(&acts, Tensor::zeros(&[m, 1]), Tensor::zeros(&[n, 1]), None).unwrap()
    }

    #[test]
    fn two_node_single_edge() {
        let a = normalize_adjacency(&graph(1, 1, &[(0, 0)]));
        assert_eq!(a.to_dense(), vec![0.5, 0.5, 0.5, 0.5]);
        assert_eq!(a.degree(0), 2.0);
    }

    #[test]
    fn edgeless_graph_is_identity() {
        let a = normalize_adjacency(&graph(2, 3, &[]));
        let d = a.to_dense();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(d[i * 5 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn weights_enter_degrees() {
        let a = normalize_adjacency(&graph(1, 2, &[(0, 0), (0, 0), (0, 1)]));
        // Ã row 0 = [1, 2, 1] → d = 4; item 0 row = [2, 1, 0] → d = 3
        assert!((a.get(0, 1) - 2.0 / (4.0f64 * 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(a.get(1, 2), 0.0);
    }

    #[test]
    fn augmentation_block_adds_weight() {
        let g = graph(2, 2, &[(0, 0)]);
        let a = NormalizedAdjacency::with_augmentation(&g, &[1], &[0.0, 2.0]);
        let b = normalize_adjacency(&graph(2, 2, &[(0, 0), (1, 1), (1, 1)]));
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn augmentation_gradient_matches_finite_differences() {
        use crate::numerics::{grad_check, ParamStore};
        use std::sync::Arc;
        let g = graph(3, 4, &[(0, 0), (0, 1), (1, 1), (1, 1), (2, 3)]);
        let users = Arc::new(vec![0, 2]);
        let mut store = ParamStore::new(0);
        store.insert("r", Tensor::matrix(2, 4, vec![0.3, 0.0, 1.2, 0.5, 0.9, 0.1, 0.0, 0.7]).unwrap()).unwrap();
        store.insert("x", Tensor::matrix(7, 2, (0..14).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect()).unwrap()).unwrap();
        let weights: Vec<f64> = (0..14).map(|i| ((i * 3) % 7) as f64 - 2.5).collect();
        let err = grad_check(
            |t, p| {
                let r = t.param(p, "r")?;
                let x = t.param(p, "x")?;
                let adj = Arc::new(NormalizedAdjacency::with_augmentation(&g, &users, t.value(r).values()));
                let y = t.propagate_augmented(&adj, &users, r, x)?;
                let y2 = t.mul(y, y)?;
                t.weighted_sum(y2, weights.clone())
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }
}
