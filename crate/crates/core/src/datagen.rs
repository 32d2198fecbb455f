//! Synthetic labeled action logs.
//!
//! Benign users pick items by Zipf popularity at exponentially distributed
//! gaps. Bots post at near-fixed intervals and increasingly concentrate on
//! a small shared pool of otherwise unpopular items as their sequence goes
//! on, so the structural signal is weak in the earliest actions and strong
//! in the latest. Bot user features are a mildly shifted Gaussian.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::io::{read_actions, read_features, read_labels, write_actions, write_features, write_labels};
use crate::graph::{build_graph, ActionRecord, BipartiteGraph};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub m: usize,
    pub n: usize,
    pub anomaly_fraction: f64,
    pub benign_mean_actions: f64,
    pub anomaly_mean_actions: f64,
    pub bot_interval_seconds: i64,
    pub bot_jitter_seconds: i64,
    /// Probability that a bot gap is a long pause instead of a timed post.
    pub bot_pause_probability: f64,
    pub bot_item_pool_size: usize,
    /// Share of pool items at the start and the end of a bot's sequence.
    pub pool_share_start: f64,
    pub pool_share_end: f64,
    /// Shape of the ramp: the share at sequence position `t ∈ [0, 1]` is
    /// `start + (end − start) · t^exponent`.
    pub pool_ramp_exponent: f64,
    /// Probability that a bot's action right after a pool action is again
    /// a pool action.
    pub pool_burst_continue: f64,
    /// Give pool items their own feature centroid.
    pub pool_own_centroid: bool,
    pub benign_mean_gap_seconds: f64,
    pub feature_dim: usize,
    pub n_centroids: usize,
    pub centroid_scale: f64,
    pub item_noise: f64,
    /// Mean shift of bot user features along a random unit direction.
    pub anomaly_feature_shift: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            m: 2000,
            n: 500,
            anomaly_fraction: 0.10,
            benign_mean_actions: 20.0,
            anomaly_mean_actions: 40.0,
            bot_interval_seconds: 30,
            bot_jitter_seconds: 2,
            bot_pause_probability: 0.1,
            bot_item_pool_size: 5,
            pool_share_start: 0.1,
            pool_share_end: 0.9,
            pool_ramp_exponent: 1.0,
            pool_own_centroid: true,
            pool_burst_continue: 0.8,
            benign_mean_gap_seconds: 3600.0,
            feature_dim: 16,
            n_centroids: 10,
            centroid_scale: 1.0,
            item_noise: 0.3,
            anomaly_feature_shift: 0.3,
            zipf_exponent: 1.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation { index: 0, reason: msg });
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            return bad(format!("anomaly_fraction must lie in (0, 1), got {}", self.anomaly_fraction));
        }
        if self.m == 0 || self.n == 0 || self.feature_dim == 0 || self.n_centroids == 0 || self.bot_item_pool_size == 0 {
            return bad("m, n, feature_dim, n_centroids and bot_item_pool_size must be at least 1".into());
        }
        if self.bot_item_pool_size > self.n {
            return bad(format!("bot item pool ({}) larger than item count ({})", self.bot_item_pool_size, self.n));
        }
        if self.benign_mean_actions < 1.0 || self.anomaly_mean_actions < 1.0 {
            return bad("mean action counts must be at least 1".into());
        }
        if self.bot_interval_seconds <= self.bot_jitter_seconds || self.bot_jitter_seconds < 0 {
            return bad("bot interval must exceed its jitter".into());
        }
        for (name, p) in [
            ("bot_pause_probability", self.bot_pause_probability),
            ("pool_share_start", self.pool_share_start),
            ("pool_share_end", self.pool_share_end),
            ("pool_burst_continue", self.pool_burst_continue),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.benign_mean_gap_seconds > 0.0 && self.zipf_exponent > 0.0) {
            return bad("benign gap and zipf exponent must be positive".into());
        }
        Ok(())
    }

    pub fn n_anomalies(&self) -> usize {
        (self.anomaly_fraction * self.m as f64).floor() as usize
    }
}

/// Stratified train / validation / test user ids, each ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 20 / 20 / 60 per class, from a seeded shuffle.
    pub fn stratified(labels: &[u8], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = Split::default();
        for class in [1u8, 0] {
            let mut ids: Vec<usize> = (0..labels.len()).filter(|&u| labels[u] == class).collect();
            ids.shuffle(&mut rng);
            let k = ids.len() / 5;
            split.train.extend_from_slice(&ids[..k]);
            split.val.extend_from_slice(&ids[k..2 * k]);
            split.test.extend_from_slice(&ids[2 * k..]);
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        split
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub actions: Vec<ActionRecord>,
    pub user_features: Tensor,
    pub item_features: Tensor,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.labels.len()
    }

    /// Graph over a subset (for instance a truncation) of this dataset's actions.
    pub fn graph(&self, actions: &[ActionRecord]) -> Result<BipartiteGraph> {
        build_graph(actions, self.user_features.clone(), self.item_features.clone(), Some(self.labels.clone()))
    }

    /// Writes `actions.jsonl`, `user_features.csv`, `item_features.csv`,
    /// `labels.csv` and `split.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_actions(BufWriter::new(File::create(dir.join("actions.jsonl"))?), &self.actions)?;
        write_features(File::create(dir.join("user_features.csv"))?, &self.user_features)?;
        write_features(File::create(dir.join("item_features.csv"))?, &self.item_features)?;
        write_labels(File::create(dir.join("labels.csv"))?, &self.labels)?;
        serde_json::to_writer_pretty(File::create(dir.join("split.json"))?, &self.split)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let actions = read_actions(BufReader::new(File::open(dir.join("actions.jsonl"))?))?;
        let user_features = read_features(File::open(dir.join("user_features.csv"))?)?;
        let item_features = read_features(File::open(dir.join("item_features.csv"))?)?;
        let labels = read_labels(File::open(dir.join("labels.csv"))?, user_features.rows())?;
        let split = match File::open(dir.join("split.json")) {
            Ok(f) => serde_json::from_reader(BufReader::new(f))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Split::stratified(&labels, 0),
            Err(e) => return Err(e.into()),
        };
        let ds = Self { actions, user_features, item_features, labels, split };
        ds.graph(&ds.actions)?;
        Ok(ds)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, k: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).expect("positive sd");
    (0..k).map(|_| d.sample(rng)).collect()
}

fn action_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    1 + Poisson::new(mean - 1.0).expect("positive rate").sample(rng) as usize
}

/// Deterministic in `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (m, n, k) = (config.m, config.n, config.feature_dim);

    // Popularity ranks: rank r has Zipf weight; the pool takes the rarest ranks.
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.shuffle(&mut rng);
    let pool: Vec<usize> = by_rank[n - config.bot_item_pool_size..].to_vec();
    let zipf = Zipf::new(n as f64, config.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;

    let centroids: Vec<Vec<f64>> = (0..config.n_centroids).map(|_| normal_vec(&mut rng, k, config.centroid_scale)).collect();
    let mut item_vals = Vec::with_capacity(n * k);
    let pool_centroid = normal_vec(&mut rng, k, config.centroid_scale);
    for v in 0..n {
        let c = if config.pool_own_centroid && pool.contains(&v) {
            &pool_centroid
        } else {
            &centroids[rng.random_range(0..config.n_centroids)]
        };
        item_vals.extend(c.iter().zip(normal_vec(&mut rng, k, config.item_noise)).map(|(a, b)| a + b));
    }
    let item_features = Tensor::matrix(n, k, item_vals)?;

    let mut labels = vec![0u8; m];
    let mut ids: Vec<usize> = (0..m).collect();
    ids.shuffle(&mut rng);
    for &u in &ids[..config.n_anomalies()] {
        labels[u] = 1;
    }
    let direction = {
        let v = normal_vec(&mut rng, k, 1.0);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / nv).collect::<Vec<_>>()
    };

    let horizon = 7.0 * 86_400.0;
    let benign_gap = Exp::new(1.0f64 / config.benign_mean_gap_seconds).expect("positive rate");
    let pause = Exp::new(1.0f64 / 3600.0).expect("positive rate");
    let mut user_vals = Vec::with_capacity(m * k);
    let mut actions = Vec::new();
    for (u, &label) in labels.iter().enumerate() {
        let mut f = normal_vec(&mut rng, k, 1.0);
        if label == 1 {
            f.iter_mut().zip(&direction).for_each(|(x, d)| *x += config.anomaly_feature_shift * d);
        }
        user_vals.extend(f);

        let mut t = rng.random_range(0.0..horizon) as i64;
        if label == 0 {
            let l = action_count(&mut rng, config.benign_mean_actions);
            for _ in 0..l {
                let v = by_rank[zipf.sample(&mut rng) as usize - 1];
                actions.push(ActionRecord::new(u, v, t));
                t += benign_gap.sample(&mut rng).ceil() as i64;
            }
        } else {
            let l = action_count(&mut rng, config.anomaly_mean_actions);
            let mut in_pool = false;
            for i in 0..l {
                let frac = if l > 1 { i as f64 / (l - 1) as f64 } else { 1.0 };
                let share = config.pool_share_start
                    + (config.pool_share_end - config.pool_share_start) * frac.powf(config.pool_ramp_exponent);
                in_pool = if in_pool { rng.random::<f64>() < config.pool_burst_continue } else { false }
                    || rng.random::<f64>() < share;
                let v = if in_pool {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    by_rank[zipf.sample(&mut rng) as usize - 1]
                };
                actions.push(ActionRecord::new(u, v, t));
                t += if rng.random::<f64>() < config.bot_pause_probability {
                    pause.sample(&mut rng).ceil() as i64 + config.bot_interval_seconds + config.bot_jitter_seconds + 1
                } else {
                    config.bot_interval_seconds + rng.random_range(-config.bot_jitter_seconds..=config.bot_jitter_seconds)
                };
            }
        }
    }
    actions.sort_by_key(|a| (a.ts, a.user));
    let split = Split::stratified(&labels, config.seed ^ 0x5eed);
    Ok(Dataset { actions, user_features: Tensor::matrix(m, k, user_vals)?, item_features, labels, split })
}

/// Share of a user's consecutive gaps within `interval ± jitter`, per user
/// (NaN for users with fewer than two actions).
pub fn regular_gap_share(actions: &[ActionRecord], m: usize, interval: i64, jitter: i64) -> Vec<f64> {
    let mut times: Vec<Vec<i64>> = vec![Vec::new(); m];
    for a in actions {
        times[a.user].push(a.ts);
    }
    times
        .into_iter()
        .map(|mut t| {
            t.sort_unstable();
            if t.len() < 2 {
                return f64::NAN;
            }
            let hits = t.windows(2).filter(|w| (w[1] - w[0] - interval).abs() <= jitter).count();
            hits as f64 / (t.len() - 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig { m: 300, n: 80, seed: 4, ..Default::default() }
    }

    #[test]
    fn exact_anomaly_count() {
        let cfg = GeneratorConfig { m: 2000, n: 500, benign_mean_actions: 2.0, anomaly_mean_actions: 2.0, ..Default::default() };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&y| y == 1).count(), 200);
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_actions(&mut x, &a.actions).unwrap();
        write_actions(&mut y, &b.actions).unwrap();
        assert_eq!(x, y);
        assert_eq!(a, b);
        assert_ne!(a.actions, generate(&GeneratorConfig { seed: 5, ..small() }).unwrap().actions);
    }

    #[test]
    fn bot_gaps_are_regular() {
        let cfg = small();
        let ds = generate(&cfg).unwrap();
        let share = regular_gap_share(&ds.actions, cfg.m, 30, 2);
        for u in (0..cfg.m).filter(|&u| ds.labels[u] == 1) {
            if share[u].is_finite() {
                assert!(share[u] >= 2.0 / 3.0, "user {u}: {}", share[u]);
            }
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = generate(&small()).unwrap();
        let s = &ds.split;
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        let pos = |v: &[usize]| v.iter().filter(|&&u| ds.labels[u] == 1).count();
        assert_eq!(pos(&s.train), 30 / 5);
        assert_eq!(pos(&s.val), 30 / 5);
        assert_eq!(s.train.len(), 30 / 5 + 270 / 5);
    }

    #[test]
    fn infeasible_pool_rejected() {
        let cfg = GeneratorConfig { n: 3, bot_item_pool_size: 5, ..Default::default() };
        assert!(matches!(generate(&cfg), Err(Error::Validation { .. })));
        assert!(generate(&GeneratorConfig { anomaly_fraction: 1.0, ..small() }).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }
}
