use super::bipartite::BipartiteGraph;
use super::records::{per_user_order, ActionRecord};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One user's actions in timestamp order together with the per-step input
/// features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub user_id: usize,
    pub items: Vec<usize>,
    /// `l_u × k`, or `l_u × (k + d)` when a user embedding is appended.
    pub features: Tensor,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Per-user sequences of item features, ascending by timestamp with ties in
/// input order. Users without actions are omitted. When `embeddings` is
/// given (`m × d`), each step carries the item feature followed by `z_u`.
pub fn sequences_from_actions(
    actions: &[ActionRecord],
    g: &BipartiteGraph,
    embeddings: Option<&Tensor>,
) -> Result<Vec<FeatureSequence>> {
    if let Some(z) = embeddings {
        if z.rows() != g.n_users() {
            return Err(Error::dim("user embeddings rows", g.n_users(), z.rows()));
        }
    }
    let items_f = g.item_features();
    let k = g.feature_dim();
    let d = embeddings.map_or(0, |z| z.cols());
    let mut out = Vec::new();
    for (user, idx) in per_user_order(actions) {
        let items: Vec<usize> = idx.iter().map(|&i| actions[i].item).collect();
        let mut vals = Vec::with_capacity(items.len() * (k + d));
        for &v in &items {
            if v >= g.n_items() {
                return Err(Error::Validation { index: v, reason: format!("item id {v} out of range") });
            }
            vals.extend_from_slice(items_f.row(v));
            if let Some(z) = embeddings {
                vals.extend_from_slice(z.row(user));
            }
        }
        let features = Tensor::matrix(items.len(), k + d, vals)?;
        out.push(FeatureSequence { user_id: user, items, features });
    }
    Ok(out)
}
