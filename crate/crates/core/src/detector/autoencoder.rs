//! Graph autoencoder scored by reconstruction error.
//!
//! Encoder: `n_layers` GCN layers, ReLU between them and linear at the top,
//! giving `Z` for every node. Decoders: `sigmoid(Z_U Z_Iᵀ)` against the
//! binary user–item incidence, and `Z_U W_dec` against the user feature rows.
//! A user's score is `α·‖A_u − Â_u‖² + (1 − α)·‖X_u − X̂_u‖²`; training
//! minimizes the mean score.

use std::sync::Arc;

use super::gcn::n_layers;
use super::{layer_name, Propagation};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NormalizedAdjacency};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

pub const PREFIX: &str = "ae";
pub const DECODER: &str = "ae.w_dec";

#[derive(Clone, Copy, Debug)]
pub struct AutoencoderVars {
    /// Encoder output for every node.
    pub z: Var,
    /// Per-user scores, `m × 1`.
    pub scores: Var,
    /// Mean score.
    pub objective: Var,
}

/// `m × n` matrix with 1 where the user touched the item at least once.
pub fn structure_target(g: &BipartiteGraph) -> Tensor {
    let n = g.n_items();
    let mut t = Tensor::zeros(&[g.n_users(), n]);
    for ((u, v), _) in g.edges() {
        t.values_mut()[u * n + v] = 1.0;
    }
    t
}

pub fn autoencoder_tape(
    tape: &mut Tape,
    prop: &Propagation,
    x: Var,
    store: &ParamStore,
    target: &Tensor,
    alpha: f64,
) -> Result<AutoencoderVars> {
    let layers = n_layers(store, PREFIX);
    if layers < 1 {
        return Err(Error::Parameter("autoencoder has no encoder layers".into()));
    }
    let adj = prop.adjacency();
    let (m, n) = (adj.n_users(), adj.n_items());
    let (rows, k) = tape.value(x).dims2();
    if rows != m + n {
        return Err(Error::dim("autoencoder layer 1 input rows", m + n, rows));
    }
    if target.dims2() != (m, n) {
        return Err(Error::dim("autoencoder structure target", format!("({m}, {n})"), format!("{:?}", target.dims2())));
    }
    let mut h = x;
    for i in 1..=layers {
        let w = tape.param(store, &layer_name(PREFIX, i))?;
        let (hc, wr) = (tape.value(h).cols(), tape.value(w).rows());
        if hc != wr {
            return Err(Error::dim(format!("autoencoder layer {i} input width"), wr, hc));
        }
        let pre = if hc <= tape.value(w).cols() {
            let ah = prop.apply(tape, h)?;
            tape.matmul(ah, w)?
        } else {
            let hw = tape.matmul(h, w)?;
            prop.apply(tape, hw)?
        };
        h = if i < layers { tape.relu(pre) } else { pre };
    }
    let z = h;
    let zu = tape.slice_rows(z, 0, m)?;
    let zi = tape.slice_rows(z, m, n)?;
    let sim = tape.matmul_nt(zu, zi)?;
    let recon = tape.sigmoid(sim);
    let a = tape.constant(target.clone());
    let ds = tape.sub(recon, a)?;
    let structure = tape.row_sq_norm(ds);

    let w_dec = tape.param(store, DECODER)?;
    let (dr, dc) = tape.value(w_dec).dims2();
    if dr != tape.value(z).cols() || dc != k {
        return Err(Error::dim("autoencoder attribute decoder", format!("({}, {k})", tape.value(z).cols()), format!("({dr}, {dc})")));
    }
    let xr = tape.matmul(zu, w_dec)?;
    let xu = tape.slice_rows(x, 0, m)?;
    let dx = tape.sub(xr, xu)?;
    let attribute = tape.row_sq_norm(dx);

    let s1 = tape.affine(structure, alpha, 0.0);
    let s2 = tape.affine(attribute, 1.0 - alpha, 0.0);
    let scores = tape.add(s1, s2)?;
    let objective = tape.weighted_sum(scores, vec![1.0 / m.max(1) as f64; m])?;
    Ok(AutoencoderVars { z, scores, objective })
}

/// Raw reconstruction scores per user and the user rows of `Z`.
pub fn autoencoder_forward(
    adj: &Arc<NormalizedAdjacency>,
    x: &Tensor,
    target: &Tensor,
    params: &ParamStore,
    alpha: f64,
) -> Result<(Vec<f64>, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = autoencoder_tape(&mut tape, &Propagation::Fixed(Arc::clone(adj)), xv, params, target, alpha)?;
    let z = tape.value(vars.z).clone();
    let users: Vec<usize> = (0..adj.n_users()).collect();
    Ok((tape.value(vars.scores).values().to_vec(), z.select_rows(&users), z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalize_adjacency, ActionRecord};
    use crate::numerics::{sigmoid, tensor::dot};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn scores_match_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, k, d) = (5, 4, 3, 2);
        let acts: Vec<_> = (0..12).map(|t| ActionRecord::new(rng.random_range(0..m), rng.random_range(0..n), t)).collect();
        let g = build_graph(&acts, random(&mut rng, m, k), random(&mut rng, n, k), None).unwrap();
        let adj = Arc::new(normalize_adjacency(&g));
        let mut p = ParamStore::new(0);
        p.insert("ae.w1", random(&mut rng, k, d)).unwrap();
        p.insert("ae.w2", random(&mut rng, d, d)).unwrap();
        p.insert(DECODER, random(&mut rng, d, k)).unwrap();
        let x = g.node_features();
        let target = structure_target(&g);
        let (scores, _, _) = autoencoder_forward(&adj, &x, &target, &p, 0.8).unwrap();

        let a = adj.to_dense();
        let nn = m + n;
        let prop = |h: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..nn).map(|i| (0..h[0].len()).map(|c| (0..nn).map(|j| a[i * nn + j] * h[j][c]).sum()).collect()).collect()
        };
        let mul = |h: &Vec<Vec<f64>>, w: &Tensor| -> Vec<Vec<f64>> {
            let (r, c) = w.dims2();
            h.iter().map(|row| (0..c).map(|j| (0..r).map(|i| row[i] * w.values()[i * c + j]).sum()).collect()).collect()
        };
        let xs: Vec<Vec<f64>> = (0..nn).map(|i| x.row(i).to_vec()).collect();
        let h1: Vec<Vec<f64>> = mul(&prop(&xs), p.get("ae.w1").unwrap()).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        let z = mul(&prop(&h1), p.get("ae.w2").unwrap());
        let xr = mul(&z[..m].to_vec(), p.get(DECODER).unwrap());
        for u in 0..m {
            let s: f64 = (0..n).map(|v| (sigmoid(dot(&z[u], &z[m + v])) - target.row(u)[v]).powi(2)).sum();
            let t: f64 = (0..k).map(|c| (xr[u][c] - xs[u][c]).powi(2)).sum();
            assert!((scores[u] - (0.8 * s + 0.2 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_target_ignores_counts() {
        let acts = [ActionRecord::new(0, 1, 0), ActionRecord::new(0, 1, 1)];
        let g = build_graph(&acts, Tensor::zeros(&[1, 1]), Tensor::zeros(&[2, 1]), None).unwrap();
        assert_eq!(structure_target(&g).values(), &[0.0, 1.0]);
    }
}
