use std::collections::BTreeMap;

use super::records::ActionRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Weighted user–item graph. Absent pairs have weight zero; stored weights
/// are always at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    m: usize,
    n: usize,
    adjacency: BTreeMap<(usize, usize), u64>,
    user_features: Tensor,
    item_features: Tensor,
    labels: Option<Vec<u8>>,
}

impl BipartiteGraph {
    /// Counts actions per (user, item) pair. `m` and `n` come from the
    /// feature matrices.
    pub fn build(
        actions: &[ActionRecord],
        user_features: Tensor,
        item_features: Tensor,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let (m, ku) = user_features.dims2();
        let (n, kv) = item_features.dims2();
        if ku != kv {
            return Err(Error::dim("item feature width", ku, kv));
        }
        if let Some(l) = &labels {
            if l.len() != m {
                return Err(Error::dim("labels", m, l.len()));
            }
            if let Some(i) = l.iter().position(|&y| y > 1) {
                return Err(Error::Validation { index: i, reason: format!("label {} is not 0 or 1", l[i]) });
            }
        }
        let mut adjacency = BTreeMap::new();
        for (index, a) in actions.iter().enumerate() {
            if a.user >= m {
                return Err(Error::Validation { index, reason: format!("user id {} out of range [0, {m})", a.user) });
            }
            if a.item >= n {
                return Err(Error::Validation { index, reason: format!("item id {} out of range [0, {n})", a.item) });
            }
            if a.ts < 0 {
                return Err(Error::Validation { index, reason: format!("negative timestamp {}", a.ts) });
            }
            *adjacency.entry((a.user, a.item)).or_insert(0) += 1;
        }
        Ok(Self { m, n, adjacency, user_features, item_features, labels })
    }

    pub fn n_users(&self) -> usize {
        self.m
    }

    pub fn n_items(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.m + self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.user_features.cols()
    }

    pub fn weight(&self, user: usize, item: usize) -> u64 {
        self.adjacency.get(&(user, item)).copied().unwrap_or(0)
    }

    /// Stored `(user, item) → weight` entries in ascending key order.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.adjacency.iter().map(|(&k, &w)| (k, w))
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.adjacency.values().sum()
    }

    /// Weighted user degrees `d_u = Σ_v A_uv`.
    pub fn user_degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.m];
        for (&(u, _), &w) in &self.adjacency {
            d[u] += w as f64;
        }
        d
    }

    pub fn user_features(&self) -> &Tensor {
        &self.user_features
    }

    pub fn item_features(&self) -> &Tensor {
        &self.item_features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// User rows stacked over item rows: `(m + n) × k`.
    pub fn node_features(&self) -> Tensor {
        self.user_features
            .concat_rows(&self.item_features)
            .expect("feature widths validated at construction")
    }

    /// New graph with one unit of weight added per predicted `(user, item)`.
    pub fn augment(&self, predictions: &BTreeMap<usize, Vec<usize>>) -> Result<Self> {
        let mut out = self.clone();
        for (&u, items) in predictions {
            if u >= self.m {
                return Err(Error::Validation { index: u, reason: format!("predicted user {u} out of range [0, {})", self.m) });
            }
            for &v in items {
                if v >= self.n {
                    return Err(Error::Validation { index: u, reason: format!("predicted item {v} out of range [0, {})", self.n) });
                }
                *out.adjacency.entry((u, v)).or_insert(0) += 1;
            }
        }
        Ok(out)
    }
}

pub fn build_graph(
    actions: &[ActionRecord],
    user_features: Tensor,
    item_features: Tensor,
    labels: Option<Vec<u8>>,
) -> Result<BipartiteGraph> {
    BipartiteGraph::build(actions, user_features, item_features, labels)
}

pub fn augment_adjacency(g: &BipartiteGraph, predictions: &BTreeMap<usize, Vec<usize>>) -> Result<BipartiteGraph> {
    g.augment(predictions)
}
