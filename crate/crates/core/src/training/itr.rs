use log::info;
use serde::{Deserialize, Serialize};

use super::ItrConfig;
use crate::augmenter::{budget_itr, plan_discrete, train_augmenter, AugmentationPlan};
use crate::detector::{train_detector_with_features, TrainedDetector};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::graph::{sequences_from_actions, ActionRecord, BipartiteGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItrOutcome {
    /// Suspiciousness from the selected iteration.
    pub suspiciousness: Vec<f64>,
    /// Validation AUC after the initial pass and after each iteration;
    /// empty when there are no labels or the validation set is one-class.
    pub val_auc: Vec<f64>,
    /// 0 is the initial pass on the observed graph.
    pub selected_iteration: usize,
    /// Augmentation used by the selected iteration (empty for iteration 0).
    pub plan: AugmentationPlan,
    /// Width of the detector input in the last iteration.
    pub feature_width: usize,
}

fn validation_auc(g: &BipartiteGraph, yhat: &[f64], val: &[usize]) -> Option<f64> {
    let labels = g.labels()?;
    let s: Vec<f64> = val.iter().map(|&u| yhat[u]).collect();
    let y: Vec<u8> = val.iter().map(|&u| labels[u]).collect();
    auc(&s, &y).ok()
}

/// Alternates a fresh augmenter and a fresh detector `config.iterations`
/// times, starting from a detector on the observed graph. Every augmented
/// graph is built from the observed one; detector inputs after the first
/// pass are the original node features followed by the latest node
/// embeddings. Iteration `i` seeds both modules with `seed ⊕ i`.
pub fn run_eland_itr(
    g: &BipartiteGraph,
    actions: &[ActionRecord],
    train: &[usize],
    val: &[usize],
    config: &ItrConfig,
) -> Result<ItrOutcome> {
    config.validate()?;
    let x_orig = g.node_features();
    let items = g.item_features();
    let mut det: TrainedDetector = train_detector_with_features(g, &x_orig, train, &config.detector, config.seed)?;
    let mut x = x_orig.concat_cols(&det.output.node_embeddings)?;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(validation_auc(g, &det.output.suspiciousness, val));

    let mut best = (0, det.output.suspiciousness.clone(), AugmentationPlan::default());
    let mut current = best.clone();
    for i in 1..=config.iterations {
        let seed = config.seed ^ i as u64;
        let seqs = sequences_from_actions(actions, g, Some(&det.output.embeddings))?;
        if seqs.is_empty() {
            return Err(Error::Config("no user has any action; nothing to augment".into()));
        }
        let (aug, _) = train_augmenter(&seqs, items, &config.augmenter, seed)?;
        let yhat = &det.output.suspiciousness;
        let budgets: Vec<usize> = seqs.iter().map(|s| budget_itr(&[yhat[s.user_id]], config.kappa)[0]).collect();
        let plan = plan_discrete(&seqs, &budgets, &aug, items)?;
        let g_aug = g.augment(&plan.predictions)?;
        det = train_detector_with_features(&g_aug, &x, train, &config.detector, seed)?;
        x = x_orig.concat_cols(&det.output.node_embeddings)?;
        let score = validation_auc(g, &det.output.suspiciousness, val);
        info!("itr iteration {i}: {} predicted actions, val AUC {:?}", plan.total_predictions(), score);
        trace.push(score);
        current = (i, det.output.suspiciousness.clone(), plan);
        let improves = match (score, trace[best.0]) {
            (Some(s), Some(b)) => s > b,
            _ => false,
        };
        if improves {
            best = current.clone();
        }
    }
    let val_auc: Vec<f64> = trace.iter().map_while(|s| *s).collect();
    let (selected_iteration, suspiciousness, plan) = if config.select_best_by_validation { best } else { current };
    Ok(ItrOutcome {
        suspiciousness,
        val_auc: if val_auc.len() == trace.len() { val_auc } else { Vec::new() },
        selected_iteration,
        plan,
        feature_width: x.cols(),
    })
}
