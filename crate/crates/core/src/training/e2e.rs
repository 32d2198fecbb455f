use std::collections::BTreeMap;
use std::sync::Arc;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{anneal_tau, E2eConfig};
use crate::augmenter::{
    budget_e2e, encode_batch, init_augmenter, relaxed_rollout, AugmentationPlan, Noise, Readout, RelaxedRollout,
    SequenceBatch, GRU_PREFIX,
};
use crate::detector::{
    detector_forward, detector_objective, init_detector, structure_target, DetectorConfig, DetectorVariant,
    Propagation, Supervision,
};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, sequences_from_actions, ActionRecord, BipartiteGraph, NormalizedAdjacency};
use crate::numerics::{Adam, GruVars, ParamStore, Selection, Tape, Tensor, Var};

/// Jointly trained detector and augmenter weights.
#[derive(Clone, Debug)]
pub struct E2eModel {
    pub detector: ParamStore,
    pub augmenter: ParamStore,
}

impl E2eModel {
    /// Splits tape gradients by owning store.
    fn split(&self, grads: BTreeMap<String, Vec<f64>>) -> (BTreeMap<String, Vec<f64>>, BTreeMap<String, Vec<f64>>) {
        grads.into_iter().partition(|(name, _)| self.detector.contains(name))
    }
}

/// Tape handles of one end-to-end objective evaluation.
#[derive(Debug)]
pub struct E2eVars {
    pub l_ad: Var,
    /// Teacher-forced augmentation loss; absent when no sequence has two steps.
    pub l_aug: Option<Var>,
    pub total: Var,
    pub rollout: RelaxedRollout,
    /// Adjacency the detector saw (observed graph plus the emitted block).
    pub adjacency: Arc<NormalizedAdjacency>,
}

/// `L_ad + L_aug` with the detector propagating over the observed graph
/// plus the augmenter's emitted selections. `budgets[i]` is the budget of
/// the `i`-th sequence the batch was built from.
#[allow(clippy::too_many_arguments)]
pub fn e2e_objective(
    tape: &mut Tape,
    model: &E2eModel,
    g: &BipartiteGraph,
    batch: &SequenceBatch,
    budgets: &[usize],
    x: &Tensor,
    detector: &DetectorConfig,
    sup: &Supervision,
    tau: f64,
    noise: Noise,
    mode: Selection,
) -> Result<E2eVars> {
    let gru = GruVars::bind(tape, &model.augmenter, GRU_PREFIX)?;
    let readout = Readout::bind(tape, &model.augmenter)?;
    let enc = encode_batch(tape, &gru, &readout, batch, true)?;
    let rollout =
        relaxed_rollout(tape, &gru, &readout, enc.last_hidden, batch, budgets, g.item_features(), tau, noise, mode)?;
    let (prop, adjacency) = match rollout.block {
        Some(block) => {
            let adj = Arc::new(NormalizedAdjacency::with_augmentation(g, &rollout.users, tape.value(block).values()));
            let users = Arc::new(rollout.users.clone());
            (Propagation::Augmented { adj: Arc::clone(&adj), users, block }, adj)
        }
        None => {
            let adj = Arc::new(normalize_adjacency(g));
            (Propagation::Fixed(Arc::clone(&adj)), adj)
        }
    };
    let xv = tape.constant(x.clone());
    let l_ad = detector_objective(tape, &prop, xv, &model.detector, detector, sup)?.loss;
    let total = match enc.loss {
        Some(l) => tape.add(l_ad, l)?,
        None => l_ad,
    };
    Ok(E2eVars { l_ad, l_aug: enc.loss, total, rollout, adjacency })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct E2eOutcome {
    pub suspiciousness: Vec<f64>,
    /// `L_e2e` per epoch, before that epoch's update.
    pub losses: Vec<f64>,
    pub ad_losses: Vec<f64>,
    pub aug_losses: Vec<f64>,
    /// Items added at inference.
    pub plan: AugmentationPlan,
    #[serde(skip)]
    pub model: Option<E2eModel>,
}

/// Joint training with straight-through Gumbel-Softmax decoding, the
/// temperature annealed linearly over the epochs. Budgets are spread over
/// users in proportion to their observed weighted degree. At inference the
/// augmenter decodes without noise and the detector scores the resulting
/// graph.
pub fn run_eland_e2e(g: &BipartiteGraph, actions: &[ActionRecord], train: &[usize], config: &E2eConfig) -> Result<E2eOutcome> {
    config.validate()?;
    let supervised = config.detector.variant == DetectorVariant::GcnSupervised;
    if supervised && (g.labels().is_none() || train.is_empty()) {
        return Err(Error::Config("the supervised detector needs labels and a non-empty training set".into()));
    }
    let seqs = sequences_from_actions(actions, g, None)?;
    if seqs.is_empty() {
        return Err(Error::Config("no user has any action; nothing to augment".into()));
    }
    let items = g.item_features();
    let batch = SequenceBatch::new(&seqs, items.cols())?;
    let by_user = budget_e2e(&g.user_degrees(), config.gamma)?;
    let budgets: Vec<usize> = seqs.iter().map(|s| by_user[s.user_id]).collect();
    let x = g.node_features();
    let structure = (!supervised).then(|| structure_target(g));
    let sup = Supervision { labels: g.labels(), train, structure: structure.as_ref() };

    let mut model = E2eModel {
        detector: init_detector(&config.detector, x.cols(), config.seed)?,
        augmenter: init_augmenter(batch.input_dim(), config.augmenter.hidden_dim, items.cols(), config.seed ^ 0xa5a5_a5a5)?,
    };
    let mut opt_det = Adam::new(config.detector.learning_rate, config.detector.weight_decay);
    let mut opt_aug = Adam::new(config.augmenter.learning_rate, config.augmenter.weight_decay);
    let mut noise_seeds = ChaCha8Rng::seed_from_u64(config.seed ^ 0x006e_6f69_7365);
    let (mut losses, mut ad_losses, mut aug_losses) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 0..config.n_epochs {
        let tau = anneal_tau(epoch, config.n_epochs, config.tau_start, config.tau_end)?;
        let noise = Noise::Seeded(noise_seeds.random());
        let mut tape = Tape::new();
        let vars = e2e_objective(
            &mut tape,
            &model,
            g,
            &batch,
            &budgets,
            &x,
            &config.detector,
            &sup,
            tau,
            noise,
            Selection::StraightThrough,
        )?;
        let total = tape.scalar(vars.total);
        if !total.is_finite() {
            return Err(Error::Evaluation(format!("end-to-end loss is {total} at epoch {epoch}")));
        }
        losses.push(total);
        ad_losses.push(tape.scalar(vars.l_ad));
        aug_losses.push(vars.l_aug.map_or(0.0, |l| tape.scalar(l)));
        debug!("e2e epoch {epoch}: tau {tau:.3}, loss {total:.5}");
        let grads = tape.backward(vars.total)?.named(&tape);
        let (gd, ga) = model.split(grads);
        opt_det.step(&mut model.detector, &gd)?;
        opt_aug.step(&mut model.augmenter, &ga)?;
    }

    let mut tape = Tape::new();
    let vars = e2e_objective(
        &mut tape,
        &model,
        g,
        &batch,
        &budgets,
        &x,
        &config.detector,
        &sup,
        config.tau_end,
        Noise::None,
        Selection::StraightThrough,
    )?;
    let output = detector_forward(&model.detector, &vars.adjacency, &x, &config.detector, structure.as_ref())?;
    let plan = AugmentationPlan {
        budgets: seqs.iter().zip(&budgets).map(|(s, &b)| (s.user_id, b)).collect(),
        predictions: vars.rollout.picks,
    };
    Ok(E2eOutcome { suspiciousness: output.suspiciousness, losses, ad_losses, aug_losses, plan, model: Some(model) })
}
