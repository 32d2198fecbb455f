//! Sequence augmentation: a GRU reads each user's item-feature sequence, a
//! linear readout predicts the next item's features, and predictions are
//! decoded to concrete items either greedily by cosine similarity or through
//! a Gumbel-Softmax relaxation.

mod batch;

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureSequence;
use crate::numerics::gumbel::gumbel_noise;
use crate::numerics::similarity::cosine_slices;
use crate::numerics::tensor::{dot, norm};
use crate::numerics::{init_gru, Adam, GruVars, ParamStore, Tape, Tensor};

pub use batch::{
    decode_discrete_batch, encode_batch, relaxed_rollout, Encoded, Noise, Readout, RelaxedRollout, SequenceBatch,
    GRU_PREFIX,
};

pub const READOUT_W: &str = "readout.w";
pub const READOUT_B: &str = "readout.b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmenterConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for AugmenterConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, epochs: 30, learning_rate: 0.01, weight_decay: 5e-4 }
    }
}

/// Fresh GRU and readout weights: inputs of width `input_dim`, predictions
/// of width `item_dim`.
pub fn init_augmenter(input_dim: usize, hidden: usize, item_dim: usize, seed: u64) -> Result<ParamStore> {
    if hidden == 0 {
        return Err(Error::Config("augmenter hidden_dim must be at least 1".into()));
    }
    let mut s = ParamStore::new(seed);
    init_gru(&mut s, GRU_PREFIX, input_dim, hidden)?;
    s.init_glorot(READOUT_W, hidden, item_dim)?;
    s.init_zeros(READOUT_B, &[item_dim])?;
    Ok(s)
}

/// Predicted items and the budget that produced them, per user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub budgets: BTreeMap<usize, usize>,
    pub predictions: BTreeMap<usize, Vec<usize>>,
}

#[derive(Serialize)]
struct DumpLine<'a> {
    user: usize,
    predicted_items: &'a [usize],
    budget: usize,
}

impl AugmentationPlan {
    /// One JSON object per user with a budget entry, ascending user id.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (&user, &budget) in &self.budgets {
            let items = self.predictions.get(&user).map_or(&[][..], Vec::as_slice);
            serde_json::to_writer(&mut w, &DumpLine { user, predicted_items: items, budget })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn total_predictions(&self) -> usize {
        self.predictions.values().map(Vec::len).sum()
    }
}

/// Hidden states `h_1 … h_l` of one sequence from `h_0 = 0`.
pub fn encode_sequence(seq: &FeatureSequence, params: &ParamStore) -> Result<Vec<Tensor>> {
    if seq.is_empty() {
        return Err(Error::Parameter(format!("sequence of user {} is empty", seq.user_id)));
    }
    let mut tape = Tape::new();
    let gru = GruVars::bind(&mut tape, params, GRU_PREFIX)?;
    let mut h = tape.constant(Tensor::zeros(&[1, gru.hidden]));
    let mut out = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let x = tape.constant(Tensor::matrix(1, seq.feature_dim(), seq.features.row(t).to_vec())?);
        h = gru.step(&mut tape, x, h)?;
        out.push(Tensor::vector(tape.value(h).values().to_vec()));
    }
    Ok(out)
}

/// `x̂ = hᵀ W_p + b_p`.
pub fn predict_next_feature(h: &Tensor, params: &ParamStore) -> Result<Tensor> {
    let w = params.get(READOUT_W)?;
    let b = params.get(READOUT_B)?;
    let (r, c) = w.dims2();
    if h.numel() != r {
        return Err(Error::dim("readout input", r, h.numel()));
    }
    let mut out = b.values().to_vec();
    for (i, hv) in h.values().iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w.values()[i * c..(i + 1) * c]) {
            *o += hv * wv;
        }
    }
    Ok(Tensor::vector(out))
}

/// Item whose feature row is most cosine-similar to `x̂`; lowest id on ties.
/// A zero-norm `x̂` falls back to item 0.
pub fn snap_to_item(xhat: &Tensor, item_features: &Tensor) -> usize {
    let norms: Vec<f64> = (0..item_features.rows()).map(|j| norm(item_features.row(j))).collect();
    snap_scan(xhat.values(), item_features, &norms)
}

pub(crate) fn snap_scan(xhat: &[f64], items: &Tensor, item_norms: &[f64]) -> usize {
    let nx = norm(xhat);
    if nx == 0.0 {
        warn!("zero-norm prediction; snapping to item 0");
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &nj) in item_norms.iter().enumerate() {
        if nj == 0.0 {
            continue;
        }
        let c = (dot(xhat, items.row(j)) / (nx * nj)).clamp(-1.0, 1.0);
        if c > best.1 {
            best = (j, c);
        }
    }
    best.0
}

/// Greedy decoding of `budget` future items for one sequence.
pub fn decode_discrete(seq: &FeatureSequence, budget: usize, params: &ParamStore, item_features: &Tensor) -> Result<Vec<usize>> {
    let batch = SequenceBatch::new(std::slice::from_ref(seq), item_features.cols())?;
    let mut out = decode_discrete_batch(params, &batch, &[budget], item_features)?;
    Ok(out.remove(&seq.user_id).unwrap_or_default())
}

/// Relaxed decoding of `budget` steps for one sequence, with Gumbel noise
/// from `rng`. Returns each step's relaxed vector and its hard index.
pub fn decode_relaxed<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    budget: usize,
    params: &ParamStore,
    item_features: &Tensor,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<(Tensor, usize)>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let hidden = encode_sequence(seq, params)?;
    let n = item_features.rows();
    let k = item_features.cols();
    let tail = seq.features.row(0)[k..].to_vec();
    let norms: Vec<f64> = (0..n).map(|j| norm(item_features.row(j))).collect();
    let mut tape = Tape::new();
    let gru = GruVars::bind(&mut tape, params, GRU_PREFIX)?;
    let mut h = tape.constant(Tensor::matrix(1, gru.hidden, hidden.last().expect("non-empty").values().to_vec())?);
    let mut out = Vec::with_capacity(budget);
    for step in 0..budget {
        let xhat = predict_next_feature(&Tensor::vector(tape.value(h).values().to_vec()), params)?;
        let nx = norm(xhat.values());
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                let c = if nx == 0.0 || norms[j] == 0.0 { 0.0 } else { dot(xhat.values(), item_features.row(j)) / (nx * norms[j]) };
                crate::numerics::tape::cos_logit(c)
            })
            .collect();
        let noise = gumbel_noise(rng, n);
        let (relaxed, hard) = crate::numerics::gumbel::relaxed_from_noise(&logits, &noise, tau);
        out.push((relaxed, hard));
        if step + 1 < budget {
            let mut x = item_features.row(hard).to_vec();
            x.extend_from_slice(&tail);
            let xv = tape.constant(Tensor::matrix(1, x.len(), x)?);
            h = gru.step(&mut tape, xv, h)?;
        }
    }
    Ok(out)
}

/// `Δl_u = floor(κ · ŷ_u)`.
pub fn budget_itr(yhat: &[f64], kappa: usize) -> Vec<usize> {
    yhat.iter().map(|&y| (kappa as f64 * y.clamp(0.0, 1.0)).floor() as usize).collect()
}

/// `Δl_u = floor(γ · d_u / Σ d)`.
pub fn budget_e2e(degrees: &[f64], gamma: usize) -> Result<Vec<usize>> {
    let total: f64 = degrees.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Parameter("degrees sum to zero; preferential budget undefined".into()));
    }
    Ok(degrees.iter().map(|&d| (gamma as f64 * d / total).floor() as usize).collect())
}

/// `−(1/|U|) Σ_u (1/n_u) Σ_i cos(x̂_i, x_i)` over per-user `n_u × k`
/// prediction and target matrices. Users with no rows are skipped.
pub fn aug_loss(predicted: &[Tensor], actual: &[Tensor]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::dim("aug_loss users", predicted.len(), actual.len()));
    }
    let mut total = 0.0;
    let mut users = 0;
    for (p, a) in predicted.iter().zip(actual) {
        if p.shape() != a.shape() {
            return Err(Error::dim("aug_loss step block", format!("{:?}", a.shape()), format!("{:?}", p.shape())));
        }
        let rows = p.rows();
        if rows == 0 || p.numel() == 0 {
            continue;
        }
        let mut s = 0.0;
        for i in 0..rows {
            s += cosine_slices(p.row(i), a.row(i))?;
        }
        total += s / rows as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::Parameter("aug_loss over an empty user set".into()));
    }
    Ok(-total / users as f64)
}

/// Teacher-forced training of a fresh augmenter. Returns the parameters and
/// the loss before each update (empty when no sequence has two steps).
pub fn train_augmenter(
    seqs: &[FeatureSequence],
    item_features: &Tensor,
    config: &AugmenterConfig,
    seed: u64,
) -> Result<(ParamStore, Vec<f64>)> {
    let batch = SequenceBatch::new(seqs, item_features.cols())?;
    let mut params = init_augmenter(batch.input_dim(), config.hidden_dim, item_features.cols(), seed)?;
    let mut losses = Vec::new();
    if batch.n_terms() == 0 {
        warn!("no sequence has two or more actions; augmenter left untrained");
        return Ok((params, losses));
    }
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let gru = GruVars::bind(&mut tape, &params, GRU_PREFIX)?;
        let readout = Readout::bind(&mut tape, &params)?;
        let enc = encode_batch(&mut tape, &gru, &readout, &batch, true)?;
        let loss = enc.loss.expect("terms exist");
        losses.push(tape.scalar(loss));
        let grads = tape.backward(loss)?.named(&tape);
        opt.step(&mut params, &grads)?;
    }
    Ok((params, losses))
}

/// Decodes `budgets[i]` items for `seqs[i]` and packages the plan.
pub fn plan_discrete(
    seqs: &[FeatureSequence],
    budgets: &[usize],
    params: &ParamStore,
    item_features: &Tensor,
) -> Result<AugmentationPlan> {
    let batch = SequenceBatch::new(seqs, item_features.cols())?;
    let predictions = decode_discrete_batch(params, &batch, budgets, item_features)?;
    let budgets = seqs.iter().zip(budgets).map(|(s, &b)| (s.user_id, b)).collect();
    Ok(AugmentationPlan { budgets, predictions })
}
