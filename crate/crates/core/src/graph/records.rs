use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped user → item action. Serialized as `{"user", "item", "ts"}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub user: usize,
    pub item: usize,
    pub ts: i64,
}

impl ActionRecord {
    pub fn new(user: usize, item: usize, ts: i64) -> Self {
        Self { user, item, ts }
    }
}

/// Record indices of each user, ordered by ascending timestamp with ties kept
/// in input order.
pub(crate) fn per_user_order(actions: &[ActionRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, a) in actions.iter().enumerate() {
        by_user.entry(a.user).or_default().push(i);
    }
    for idx in by_user.values_mut() {
        idx.sort_by_key(|&i| actions[i].ts);
    }
    by_user
}

/// Number of records kept from a sequence of length `len` at fraction `p`:
/// `ceil(p · len)`, at least one.
pub fn kept_count(len: usize, p: f64) -> usize {
    if len == 0 {
        return 0;
    }
    // The small slack keeps products like 0.2 · 10 = 2.0000000000000004 at 2.
    let k = (p * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len)
}

fn check_fraction(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("fraction must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Keeps each user's earliest `ceil(p · l_u)` actions. The output preserves
/// the input order of the kept records.
pub fn truncate_earliest(actions: &[ActionRecord], p: f64) -> Result<Vec<ActionRecord>> {
    check_fraction(p)?;
    let mut keep = vec![false; actions.len()];
    for idx in per_user_order(actions).values() {
        for &i in &idx[..kept_count(idx.len(), p)] {
            keep[i] = true;
        }
    }
    Ok(actions
        .iter()
        .zip(keep)
        .filter_map(|(a, k)| k.then_some(*a))
        .collect())
}

/// Wall-clock alternative: keeps every action with
/// `ts <= t_min + p · (t_max − t_min)` over the whole log.
pub fn truncate_by_time(actions: &[ActionRecord], p: f64) -> Result<Vec<ActionRecord>> {
    check_fraction(p)?;
    let (Some(lo), Some(hi)) = (actions.iter().map(|a| a.ts).min(), actions.iter().map(|a| a.ts).max()) else {
        return Ok(Vec::new());
    };
    let cutoff = lo as f64 + p * (hi - lo) as f64;
    Ok(actions.iter().filter(|a| a.ts as f64 <= cutoff).copied().collect())
}
