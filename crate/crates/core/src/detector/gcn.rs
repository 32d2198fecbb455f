use std::sync::Arc;

use super::{layer_name, DetectorOutput, Propagation};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{ParamStore, Tape, Tensor, Var, tape::PROB_EPS};

pub const PREFIX: &str = "gcn";

/// Tape handles produced by [`gcn_tape`]. All three cover every node.
#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub hidden: Var,
    pub logits: Var,
    pub prob: Var,
}

pub(crate) fn n_layers(store: &ParamStore, prefix: &str) -> usize {
    (1..).take_while(|&i| store.contains(&layer_name(prefix, i))).count()
}

/// Stacked GCN layers `H_i = ReLU(Â H_{i−1} W_i)` followed by a linear layer
/// to a single logit column. `hidden` is the penultimate layer.
pub fn gcn_tape(tape: &mut Tape, prop: &Propagation, x: Var, store: &ParamStore) -> Result<GcnVars> {
    let layers = n_layers(store, PREFIX);
    if layers < 2 {
        return Err(Error::Parameter(format!("gcn needs at least 2 layers, found {layers}")));
    }
    let n = prop.adjacency().n_nodes();
    let rows = tape.value(x).rows();
    if rows != n {
        return Err(Error::dim("gcn layer 1 input rows", n, rows));
    }
    let mut h = x;
    for i in 1..layers {
        let w = tape.param(store, &layer_name(PREFIX, i))?;
        check_inner(tape, h, w, i)?;
        // Â(HW) and (ÂH)W agree; propagate whichever side is narrower.
        let pre = if tape.value(h).cols() <= tape.value(w).cols() {
            let ah = prop.apply(tape, h)?;
            tape.matmul(ah, w)?
        } else {
            let hw = tape.matmul(h, w)?;
            prop.apply(tape, hw)?
        };
        h = tape.relu(pre);
    }
    let w = tape.param(store, &layer_name(PREFIX, layers))?;
    check_inner(tape, h, w, layers)?;
    let out_cols = tape.value(w).cols();
    if out_cols != 1 {
        return Err(Error::dim(format!("gcn layer {layers} output columns"), 1, out_cols));
    }
    let hw = tape.matmul(h, w)?;
    let logits = prop.apply(tape, hw)?;
    let prob = tape.sigmoid(logits);
    Ok(GcnVars { hidden: h, logits, prob })
}

fn check_inner(tape: &Tape, h: Var, w: Var, layer: usize) -> Result<()> {
    let (hc, wr) = (tape.value(h).cols(), tape.value(w).rows());
    if hc != wr {
        return Err(Error::dim(format!("gcn layer {layer} input width"), wr, hc));
    }
    Ok(())
}

/// Inference pass: suspiciousness is the sigmoid of the user logits.
pub fn gcn_forward(adj: &Arc<NormalizedAdjacency>, x: &Tensor, params: &ParamStore) -> Result<DetectorOutput> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = gcn_tape(&mut tape, &Propagation::Fixed(Arc::clone(adj)), xv, params)?;
    let m = adj.n_users();
    let node_embeddings = tape.value(vars.hidden).clone();
    Ok(DetectorOutput {
        suspiciousness: tape.value(vars.prob).values()[..m].to_vec(),
        embeddings: node_embeddings.select_rows(&(0..m).collect::<Vec<_>>()),
        node_embeddings,
    })
}

/// `−Σ_{u ∈ mask} (y_u log ŷ_u + (1 − y_u) log(1 − ŷ_u))` with `ŷ` clamped
/// to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(yhat: &[f64], y: &[u8], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Parameter("bce mask is empty".into()));
    }
    if yhat.len() != y.len() {
        return Err(Error::dim("bce targets", yhat.len(), y.len()));
    }
    let mut loss = 0.0;
    for &u in mask {
        let q = yhat[u].clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= if y[u] == 1 { q.ln() } else { (1.0 - q).ln() };
    }
    Ok(loss)
}
