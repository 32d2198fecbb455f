//! Length-sorted batches of sequences so every GRU step is one matrix
//! product over the users still active at that step.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{snap_scan, READOUT_B, READOUT_W};
use crate::error::{Error, Result};
use crate::graph::FeatureSequence;
use crate::numerics::gumbel::gumbel_noise;
use crate::numerics::tensor::norm;
use crate::numerics::{GruVars, ParamStore, Selection, Tape, Tensor, Var};

pub const GRU_PREFIX: &str = "gru";

/// Sequences reordered by descending length (ties keep input order).
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// `order[r]` is the input index of batch row `r`.
    pub order: Vec<usize>,
    pub users: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Step `t` inputs for the rows still active, `active(t) × k_in`.
    inputs: Vec<Tensor>,
    /// Observed item features at step `t + 1` for rows with length > t + 1.
    targets: Vec<Tensor>,
    /// Per-row appended embedding (empty without one).
    tails: Vec<Vec<f64>>,
    item_dim: usize,
}

impl SequenceBatch {
    pub fn new(seqs: &[FeatureSequence], item_dim: usize) -> Result<Self> {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
        if let Some(&i) = order.iter().find(|&&i| seqs[i].is_empty()) {
            return Err(Error::Parameter(format!("sequence of user {} is empty", seqs[i].user_id)));
        }
        let k_in = seqs.first().map_or(item_dim, |s| s.feature_dim());
        if k_in < item_dim {
            return Err(Error::dim("sequence feature width", format!(">= {item_dim}"), k_in));
        }
        for s in seqs {
            if s.feature_dim() != k_in {
                return Err(Error::dim(format!("sequence of user {} feature width", s.user_id), k_in, s.feature_dim()));
            }
        }
        let lengths: Vec<usize> = order.iter().map(|&i| seqs[i].len()).collect();
        let max_len = lengths.first().copied().unwrap_or(0);
        let mut inputs = Vec::with_capacity(max_len);
        let mut targets = Vec::with_capacity(max_len.saturating_sub(1));
        for t in 0..max_len {
            let active = lengths.iter().take_while(|&&l| l > t).count();
            let mut vals = Vec::with_capacity(active * k_in);
            for &i in &order[..active] {
                vals.extend_from_slice(seqs[i].features.row(t));
            }
            inputs.push(Tensor::matrix(active, k_in, vals)?);
            let next = lengths.iter().take_while(|&&l| l > t + 1).count();
            if next > 0 {
                let mut vals = Vec::with_capacity(next * item_dim);
                for &i in &order[..next] {
                    vals.extend_from_slice(&seqs[i].features.row(t + 1)[..item_dim]);
                }
                targets.push(Tensor::matrix(next, item_dim, vals)?);
            }
        }
        let tails = order.iter().map(|&i| seqs[i].features.row(0)[item_dim..].to_vec()).collect();
        Ok(Self {
            users: order.iter().map(|&i| seqs[i].user_id).collect(),
            order,
            lengths,
            inputs,
            targets,
            tails,
            item_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.item_dim + self.tails.first().map_or(0, Vec::len)
    }

    /// Number of teacher-forced prediction terms, `Σ_u (l_u − 1)`.
    pub fn n_terms(&self) -> usize {
        self.lengths.iter().map(|l| l - 1).sum()
    }

    /// Users contributing at least one prediction term.
    pub fn n_scored_users(&self) -> usize {
        self.lengths.iter().filter(|&&l| l > 1).count()
    }
}

/// Output of [`encode_batch`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Final hidden state per batch row, `B × |h|`.
    pub last_hidden: Var,
    /// Teacher-forced cosine loss, absent when no user has two or more steps.
    pub loss: Option<Var>,
}

/// Readout parameters bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Readout {
    pub w: Var,
    pub b: Var,
}

impl Readout {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self { w: tape.param(store, READOUT_W)?, b: tape.param(store, READOUT_B)? })
    }

    pub fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let p = tape.matmul(h, self.w)?;
        tape.add_row(p, self.b)
    }
}

/// Runs the GRU over every sequence from a zero state. With `with_loss`,
/// each hidden state `h_t` predicts `x_{t+1}` and the loss is
/// `−(1/|U'|) Σ_u (1/(l_u − 1)) Σ_t cos(x̂_{t+1}, x_{t+1})` over the users
/// `U'` with at least two steps.
pub fn encode_batch(
    tape: &mut Tape,
    gru: &GruVars,
    readout: &Readout,
    batch: &SequenceBatch,
    with_loss: bool,
) -> Result<Encoded> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Parameter("empty sequence batch".into()));
    }
    let mut h = tape.constant(Tensor::zeros(&[b, gru.hidden]));
    let mut states = Vec::with_capacity(batch.inputs.len());
    for x in &batch.inputs {
        let active = x.rows();
        let hp = if active == tape.value(h).rows() { h } else { tape.slice_rows(h, 0, active)? };
        let xv = tape.constant(x.clone());
        h = gru.step(tape, xv, hp)?;
        states.push(h);
    }
    // Rows whose sequence ends at step t are rows [active(t+1), active(t)) of h_t.
    let mut parts = Vec::new();
    for t in (0..states.len()).rev() {
        let hi = tape.value(states[t]).rows();
        let lo = batch.inputs.get(t + 1).map_or(0, Tensor::rows);
        if hi > lo {
            parts.push(tape.slice_rows(states[t], lo, hi - lo)?);
        }
    }
    let last_hidden = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };

    let loss = if with_loss && !batch.targets.is_empty() {
        let users = batch.n_scored_users() as f64;
        let mut hs = Vec::with_capacity(batch.targets.len());
        let mut ts = Vec::with_capacity(batch.targets.len());
        let mut weights = Vec::with_capacity(batch.n_terms());
        for (t, target) in batch.targets.iter().enumerate() {
            let rows = target.rows();
            hs.push(tape.slice_rows(states[t], 0, rows)?);
            ts.push(target.clone());
            weights.extend(batch.lengths[..rows].iter().map(|&l| -1.0 / ((l - 1) as f64 * users)));
        }
        let h_all = tape.concat_rows(&hs)?;
        let pred = readout.apply(tape, h_all)?;
        let pn = tape.row_normalize(pred);
        let target = ts.iter().skip(1).try_fold(ts[0].clone(), |acc, t| acc.concat_rows(t))?;
        let tv = tape.constant(normalized_rows(&target));
        let cos = tape.row_dot(pn, tv)?;
        Some(tape.weighted_sum(cos, weights)?)
    } else {
        None
    };
    Ok(Encoded { last_hidden, loss })
}

pub(crate) fn normalized_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = out.cols();
    for row in out.values_mut().chunks_mut(c.max(1)) {
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Rows with a positive budget, ordered by descending budget (ties keep
/// batch order), plus the budgets in that order.
fn budget_order(batch: &SequenceBatch, budgets: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if budgets.len() != batch.len() {
        return Err(Error::dim("budgets", batch.len(), budgets.len()));
    }
    let mut rows: Vec<usize> = (0..batch.len()).filter(|&r| budgets[batch.order[r]] > 0).collect();
    rows.sort_by_key(|&r| std::cmp::Reverse(budgets[batch.order[r]]));
    let b = rows.iter().map(|&r| budgets[batch.order[r]]).collect();
    Ok((rows, b))
}

/// Greedy autoregressive decoding: each prediction snaps to the most
/// cosine-similar item, whose features (plus any appended embedding) are
/// the next input. `budgets` is indexed like the sequences given to
/// [`SequenceBatch::new`]; the result maps user id to predicted items.
pub fn decode_discrete_batch(
    store: &ParamStore,
    batch: &SequenceBatch,
    budgets: &[usize],
    items: &Tensor,
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let (rows, b) = budget_order(batch, budgets)?;
    let mut out: BTreeMap<usize, Vec<usize>> = rows.iter().map(|&r| (batch.users[r], Vec::new())).collect();
    if rows.is_empty() {
        return Ok(out);
    }
    let mut tape = Tape::new();
    let gru = GruVars::bind(&mut tape, store, GRU_PREFIX)?;
    let readout = Readout::bind(&mut tape, store)?;
    let enc = encode_batch(&mut tape, &gru, &readout, batch, false)?;
    let mut h = tape.gather_rows(enc.last_hidden, &rows)?;
    let item_norms: Vec<f64> = (0..items.rows()).map(|j| norm(items.row(j))).collect();
    let k_in = batch.input_dim();
    for step in 0..b[0] {
        let active = b.iter().take_while(|&&x| x > step).count();
        if active < tape.value(h).rows() {
            h = tape.slice_rows(h, 0, active)?;
        }
        let pred = readout.apply(&mut tape, h)?;
        let mut next = Vec::with_capacity(active * k_in);
        for (i, &r) in rows[..active].iter().enumerate() {
            let v = snap_scan(tape.value(pred).row(i), items, &item_norms);
            out.get_mut(&batch.users[r]).expect("row registered").push(v);
            next.extend_from_slice(items.row(v));
            next.extend_from_slice(&batch.tails[r]);
        }
        if step + 1 < b[0] {
            let xv = tape.constant(Tensor::matrix(active, k_in, next)?);
            h = gru.step(&mut tape, xv, h)?;
        }
    }
    Ok(out)
}

/// Output of [`relaxed_rollout`].
#[derive(Clone, Debug)]
pub struct RelaxedRollout {
    /// Users with a positive budget, in block-row order.
    pub users: Vec<usize>,
    /// Per-user sum of the emitted selection vectors, `users.len() × n`.
    pub block: Option<Var>,
    /// Hard (argmax) item per step, per user.
    pub picks: BTreeMap<usize, Vec<usize>>,
    /// Relaxed vectors per step, one `active × n` node per step.
    pub relaxed: Vec<Var>,
}

/// Where the Gumbel noise for a relaxed rollout comes from.
#[derive(Clone, Copy, Debug)]
pub enum Noise {
    /// Per-user generator seeded with `seed ⊕ user_id`.
    Seeded(u64),
    /// No noise: the selection is the argmax of the similarity logits.
    None,
}

/// Relaxed autoregressive decoding on a tape. Each step maps cosine
/// similarities to logits `log(clamp((1 + cos)/2, 1e-6, 1))`, draws a
/// Gumbel-Softmax at temperature `tau`, and discretizes per `mode`. The
/// emitted selection times the item features is the next input, so with
/// straight-through selection the forward pass sees hard items while
/// gradients follow the relaxed vector.
#[allow(clippy::too_many_arguments)]
pub fn relaxed_rollout(
    tape: &mut Tape,
    gru: &GruVars,
    readout: &Readout,
    last_hidden: Var,
    batch: &SequenceBatch,
    budgets: &[usize],
    items: &Tensor,
    tau: f64,
    noise: Noise,
    mode: Selection,
) -> Result<RelaxedRollout> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let (rows, b) = budget_order(batch, budgets)?;
    let users: Vec<usize> = rows.iter().map(|&r| batch.users[r]).collect();
    let mut picks: BTreeMap<usize, Vec<usize>> = users.iter().map(|&u| (u, Vec::new())).collect();
    if rows.is_empty() {
        return Ok(RelaxedRollout { users, block: None, picks, relaxed: Vec::new() });
    }
    let n = items.rows();
    let mut rngs: Vec<ChaCha8Rng> = match noise {
        Noise::Seeded(seed) => users.iter().map(|&u| ChaCha8Rng::seed_from_u64(seed ^ u as u64)).collect(),
        Noise::None => Vec::new(),
    };
    let items_v = tape.constant(items.clone());
    let items_n = tape.constant(normalized_rows(items));
    let mut h = tape.gather_rows(last_hidden, &rows)?;
    let mut sels = Vec::new();
    let mut relaxed = Vec::new();
    let mut idx = Vec::new();
    for step in 0..b[0] {
        let active = b.iter().take_while(|&&x| x > step).count();
        if active < tape.value(h).rows() {
            h = tape.slice_rows(h, 0, active)?;
        }
        let pred = readout.apply(tape, h)?;
        let pn = tape.row_normalize(pred);
        let cos = tape.matmul_nt(pn, items_n)?;
        let logits = tape.cos_logit(cos);
        let g: Vec<f64> = match noise {
            Noise::Seeded(_) => rngs[..active].iter_mut().flat_map(|r| gumbel_noise(r, n)).collect(),
            Noise::None => vec![0.0; active * n],
        };
        let soft = tape.gumbel_softmax_rows(logits, &g, tau)?;
        let sel = tape.select(soft, mode);
        for (i, row) in tape.value(soft).values().chunks(n).enumerate() {
            picks.get_mut(&users[i]).expect("registered").push(crate::numerics::tape::argmax(row));
        }
        relaxed.push(soft);
        sels.push(sel);
        idx.extend(0..active);
        if step + 1 < b[0] {
            let x_item = tape.matmul(sel, items_v)?;
            let x = if batch.input_dim() > batch.item_dim {
                let tail: Vec<f64> = rows[..active].iter().flat_map(|&r| batch.tails[r].iter().copied()).collect();
                let tv = tape.constant(Tensor::matrix(active, batch.input_dim() - batch.item_dim, tail)?);
                tape.concat_cols(&[x_item, tv])?
            } else {
                x_item
            };
            h = gru.step(tape, x, h)?;
        }
    }
    let all = if sels.len() == 1 { sels[0] } else { tape.concat_rows(&sels)? };
    let block = tape.scatter_add_rows(all, &idx, rows.len())?;
    Ok(RelaxedRollout { users, block: Some(block), picks, relaxed })
}
