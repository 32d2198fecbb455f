use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim("metric labels", scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("score {i} is {}", scores[i])));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!("AUC needs both classes ({pos} positive, {neg} negative)")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `Σ_k (R_k − R_{k−1}) · P_k` over the ranking by descending score, ties
/// ordered by ascending index.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::MetricUndefined("AP needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}
