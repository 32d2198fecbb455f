use std::sync::Arc;

use super::autoencoder::{self, autoencoder_tape, structure_target};
use super::gcn::{self, gcn_tape};
use super::{layer_name, suspiciousness_from_scores, DetectorConfig, DetectorOutput, DetectorVariant, Propagation};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, BipartiteGraph, NormalizedAdjacency};
use crate::numerics::{Adam, ParamStore, Tape, Tensor, Var};

/// Fresh Glorot-initialized detector weights for `input_dim` features.
pub fn init_detector(config: &DetectorConfig, input_dim: usize, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut s = ParamStore::new(seed);
    let d = config.hidden_dim;
    let prefix = prefix(config.variant);
    for i in 1..=config.n_layers {
        let fan_in = if i == 1 { input_dim } else { d };
        let fan_out = if i == config.n_layers && config.variant == DetectorVariant::GcnSupervised { 1 } else { d };
        s.init_glorot(&layer_name(prefix, i), fan_in, fan_out)?;
    }
    if config.variant == DetectorVariant::AutoencoderUnsupervised {
        s.init_glorot(autoencoder::DECODER, d, input_dim)?;
    }
    Ok(s)
}

fn prefix(v: DetectorVariant) -> &'static str {
    match v {
        DetectorVariant::GcnSupervised => gcn::PREFIX,
        DetectorVariant::AutoencoderUnsupervised => autoencoder::PREFIX,
    }
}

/// What a detector objective is measured against.
#[derive(Clone, Copy, Debug)]
pub struct Supervision<'a> {
    /// Per-user labels; required by the supervised variant.
    pub labels: Option<&'a [u8]>,
    pub train: &'a [usize],
    /// Binary user–item incidence; required by the autoencoder.
    pub structure: Option<&'a Tensor>,
}

/// Tape handles for a detector objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub loss: Var,
    /// Representation layer for every node.
    pub hidden: Var,
}

/// Summed BCE on the training users (supervised) or mean reconstruction
/// score (autoencoder).
pub fn detector_objective(
    tape: &mut Tape,
    prop: &Propagation,
    x: Var,
    store: &ParamStore,
    config: &DetectorConfig,
    sup: &Supervision,
) -> Result<ObjectiveVars> {
    match config.variant {
        DetectorVariant::GcnSupervised => {
            let labels = sup
                .labels
                .ok_or_else(|| Error::Config("the supervised detector needs labels".into()))?;
            let vars = gcn_tape(tape, prop, x, store)?;
            let n = prop.adjacency().n_nodes();
            let mut targets = vec![0.0; n];
            for (t, &y) in targets.iter_mut().zip(labels) {
                *t = y as f64;
            }
            let loss = tape.bce_logits(vars.logits, &targets, sup.train)?;
            Ok(ObjectiveVars { loss, hidden: vars.hidden })
        }
        DetectorVariant::AutoencoderUnsupervised => {
            let target = sup
                .structure
                .ok_or_else(|| Error::Config("the autoencoder needs a structure target".into()))?;
            let vars = autoencoder_tape(tape, prop, x, store, target, config.alpha)?;
            Ok(ObjectiveVars { loss: vars.objective, hidden: vars.z })
        }
    }
}

/// Inference pass on a fixed adjacency.
pub fn detector_forward(
    store: &ParamStore,
    adj: &Arc<NormalizedAdjacency>,
    x: &Tensor,
    config: &DetectorConfig,
    structure: Option<&Tensor>,
) -> Result<DetectorOutput> {
    match config.variant {
        DetectorVariant::GcnSupervised => gcn::gcn_forward(adj, x, store),
        DetectorVariant::AutoencoderUnsupervised => {
            let target = structure.ok_or_else(|| Error::Config("the autoencoder needs a structure target".into()))?;
            let (scores, embeddings, node_embeddings) =
                autoencoder::autoencoder_forward(adj, x, target, store, config.alpha)?;
            Ok(DetectorOutput { suspiciousness: suspiciousness_from_scores(&scores), embeddings, node_embeddings })
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDetector {
    pub output: DetectorOutput,
    pub params: ParamStore,
    /// Objective before each update, one entry per epoch.
    pub losses: Vec<f64>,
}

/// Trains on the graph's own node features.
pub fn train_detector(g: &BipartiteGraph, config: &DetectorConfig, seed: u64, train: &[usize]) -> Result<TrainedDetector> {
    train_detector_with_features(g, &g.node_features(), train, config, seed)
}

/// Trains with Adam for `config.epochs` full-batch updates on an explicit
/// `(m + n) × k` feature matrix.
pub fn train_detector_with_features(
    g: &BipartiteGraph,
    x: &Tensor,
    train: &[usize],
    config: &DetectorConfig,
    seed: u64,
) -> Result<TrainedDetector> {
    config.validate()?;
    if x.rows() != g.n_nodes() {
        return Err(Error::dim("detector features rows", g.n_nodes(), x.rows()));
    }
    let supervised = config.variant == DetectorVariant::GcnSupervised;
    if supervised && g.labels().is_none() {
        return Err(Error::Config("the supervised detector needs labels".into()));
    }
    if supervised && train.is_empty() {
        return Err(Error::Config("the supervised detector needs a non-empty training set".into()));
    }
    let adj = Arc::new(normalize_adjacency(g));
    let structure = (!supervised).then(|| structure_target(g));
    let sup = Supervision { labels: g.labels(), train, structure: structure.as_ref() };
    let prop = Propagation::Fixed(Arc::clone(&adj));

    let mut params = init_detector(config, x.cols(), seed)?;
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = detector_objective(&mut tape, &prop, xv, &params, config, &sup)?;
        let loss = tape.scalar(vars.loss);
        if !loss.is_finite() {
            return Err(Error::Evaluation(format!("detector loss is {loss}")));
        }
        losses.push(loss);
        let grads = tape.backward(vars.loss)?.named(&tape);
        opt.step(&mut params, &grads)?;
    }
    let output = detector_forward(&params, &adj, x, config, structure.as_ref())?;
    Ok(TrainedDetector { output, params, losses })
}
