use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, average_precision};
use crate::augmenter::{AugmentationPlan, AugmenterConfig};
use crate::datagen::{Dataset, GeneratorConfig};
use crate::detector::{train_detector, DetectorConfig, DetectorVariant};
use crate::error::{Error, Result};
use crate::graph::{truncate_by_time, truncate_earliest, ActionRecord};
use crate::training::{run_eland_e2e, run_eland_itr, E2eConfig, ItrConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BaselineGcn,
    BaselineAe,
    ElandItr,
    ElandE2e,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::BaselineGcn, Method::BaselineAe, Method::ElandItr, Method::ElandE2e];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineGcn => "baseline-gcn",
            Method::BaselineAe => "baseline-ae",
            Method::ElandItr => "eland-itr",
            Method::ElandE2e => "eland-e2e",
        }
    }

    pub fn is_eland(self) -> bool {
        matches!(self, Method::ElandItr | Method::ElandE2e)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// How observed histories are cut to a fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Earliest `ceil(p · l_u)` actions of every user.
    #[default]
    PerUser,
    /// Actions in the earliest fraction `p` of the global time span.
    ByTime,
}

impl Truncation {
    pub fn apply(self, actions: &[ActionRecord], p: f64) -> Result<Vec<ActionRecord>> {
        match self {
            Truncation::PerUser => truncate_earliest(actions, p),
            Truncation::ByTime => truncate_by_time(actions, p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItrSettings {
    pub iterations: usize,
    pub kappa: usize,
    pub select_best_by_validation: bool,
}

impl Default for ItrSettings {
    fn default() -> Self {
        let d = ItrConfig::default();
        Self { iterations: d.iterations, kappa: 5, select_best_by_validation: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2eSettings {
    pub n_epochs: usize,
    pub gamma: usize,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for E2eSettings {
    fn default() -> Self {
        let d = E2eConfig::default();
        Self { n_epochs: d.n_epochs, gamma: 4000, tau_start: d.tau_start, tau_end: d.tau_end }
    }
}

/// Everything a run needs besides the seed. Defaults are desk-scale
/// settings for the default generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub detector: DetectorConfig,
    pub augmenter: AugmenterConfig,
    pub itr: ItrSettings,
    pub e2e: E2eSettings,
    pub truncation: Truncation,
    /// Concurrent sweep cells.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            detector: DetectorConfig { epochs: 200, learning_rate: 0.03, ..Default::default() },
            augmenter: AugmenterConfig::default(),
            itr: ItrSettings::default(),
            e2e: E2eSettings::default(),
            truncation: Truncation::PerUser,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.itr_config(0).validate()?;
        self.e2e_config(0).validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn itr_config(&self, seed: u64) -> ItrConfig {
        ItrConfig {
            iterations: self.itr.iterations,
            kappa: self.itr.kappa,
            detector: self.detector.clone(),
            augmenter: self.augmenter.clone(),
            select_best_by_validation: self.itr.select_best_by_validation,
            seed,
        }
    }

    pub fn e2e_config(&self, seed: u64) -> E2eConfig {
        E2eConfig {
            n_epochs: self.e2e.n_epochs,
            gamma: self.e2e.gamma,
            tau_start: self.e2e.tau_start,
            tau_end: self.e2e.tau_end,
            detector: self.detector.clone(),
            augmenter: self.augmenter.clone(),
            seed,
        }
    }

    /// Detector settings a method trains with.
    pub fn detector_for(&self, method: Method) -> DetectorConfig {
        let variant = match method {
            Method::BaselineGcn => DetectorVariant::GcnSupervised,
            Method::BaselineAe => DetectorVariant::AutoencoderUnsupervised,
            Method::ElandItr | Method::ElandE2e => self.detector.variant,
        };
        DetectorConfig { variant, ..self.detector.clone() }
    }

    /// Hash of the serialized configuration; stable for a given build.
    pub fn fingerprint(&self) -> String {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        serde_json::to_string(self).expect("config serializes").hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

/// Baseline that an ELAND method is compared against.
pub fn baseline_of(variant: DetectorVariant) -> Method {
    match variant {
        DetectorVariant::GcnSupervised => Method::BaselineGcn,
        DetectorVariant::AutoencoderUnsupervised => Method::BaselineAe,
    }
}

/// Scores and diagnostics of one trained method on one truncated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub method: Method,
    pub fraction: f64,
    pub seed: u64,
    pub suspiciousness: Vec<f64>,
    pub auc: f64,
    pub ap: f64,
    /// Validation AUC per iteration (itr) or empty.
    pub val_auc: Vec<f64>,
    /// Objective per epoch of the final model.
    pub losses: Vec<f64>,
    pub plan: Option<AugmentationPlan>,
    pub wall_seconds: f64,
}

/// Test-split AUC and AP of per-user scores.
pub fn test_metrics(ds: &Dataset, scores: &[f64]) -> Result<(f64, f64)> {
    let s: Vec<f64> = ds.split.test.iter().map(|&u| scores[u]).collect();
    let y: Vec<u8> = ds.split.test.iter().map(|&u| ds.labels[u]).collect();
    Ok((auc(&s, &y)?, average_precision(&s, &y)?))
}

/// Truncates to `fraction`, trains `method` with `seed` and scores the test
/// users.
pub fn run_method(ds: &Dataset, fraction: f64, method: Method, seed: u64, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let actions = cfg.truncation.apply(&ds.actions, fraction)?;
    let g = ds.graph(&actions)?;
    let train = &ds.split.train;
    let (suspiciousness, val_auc, losses, plan) = match method {
        Method::BaselineGcn | Method::BaselineAe => {
            let t = train_detector(&g, &cfg.detector_for(method), seed, train)?;
            (t.output.suspiciousness, Vec::new(), t.losses, None)
        }
        Method::ElandItr => {
            let mut c = cfg.itr_config(seed);
            c.detector = cfg.detector_for(method);
            let o = run_eland_itr(&g, &actions, train, &ds.split.val, &c)?;
            (o.suspiciousness, o.val_auc, Vec::new(), Some(o.plan))
        }
        Method::ElandE2e => {
            let mut c = cfg.e2e_config(seed);
            c.detector = cfg.detector_for(method);
            let o = run_eland_e2e(&g, &actions, train, &c)?;
            (o.suspiciousness, Vec::new(), o.losses, Some(o.plan))
        }
    };
    let (auc, ap) = test_metrics(ds, &suspiciousness)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    info!("{method} p={fraction} seed={seed}: AUC {auc:.4} AP {ap:.4} ({wall_seconds:.1}s)");
    Ok(RunOutcome { method, fraction, seed, suspiciousness, auc, ap, val_auc, losses, plan, wall_seconds })
}

/// One metrics row. Column order of the CSV follows field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub method: Method,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
}

/// Early-detection predicate outcome of one ELAND method over the `(p, seed)` cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateSummary {
    pub method: Method,
    pub baseline: Method,
    pub cells: usize,
    pub passed: usize,
    pub pass_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by fraction, method, seed.
    pub rows: Vec<SweepRow>,
    pub predicate: Vec<PredicateSummary>,
    /// Full outcomes in row order.
    #[serde(skip)]
    pub outcomes: Vec<RunOutcome>,
}

impl SweepResult {
    /// `fraction,method,seed,auc,ap` with a header. Timing lives in the
    /// manifest so reruns produce identical bytes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Mean AUC and AP per fraction for one method, ascending fraction.
    pub fn curve(&self, method: Method) -> Vec<(f64, f64, f64)> {
        let mut by_p: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.method == method) {
            let e = by_p.entry(r.fraction.to_bits()).or_default();
            e.0 += r.auc;
            e.1 += r.ap;
            e.2 += 1;
        }
        let mut out: Vec<(f64, f64, f64)> =
            by_p.into_iter().map(|(p, (a, b, n))| (f64::from_bits(p), a / n as f64, b / n as f64)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// `fraction,mean_auc,mean_ap` for one method.
    pub fn write_curve<W: Write>(&self, method: Method, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "mean_auc", "mean_ap"])?;
        for (p, a, b) in self.curve(method) {
            wr.write_record([p.to_string(), a.to_string(), b.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn mean_auc(&self, method: Method, fraction: f64) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.method == method && r.fraction == fraction).map(|r| r.auc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-cell early-detection check: ELAND's AUC at `(p, seed)` is at least the
/// baseline's AUC at the same cell.
pub fn predicate_summary(rows: &[SweepRow], variant: DetectorVariant) -> Vec<PredicateSummary> {
    let baseline = baseline_of(variant);
    let base: BTreeMap<(u64, u64), f64> =
        rows.iter().filter(|r| r.method == baseline).map(|r| ((r.fraction.to_bits(), r.seed), r.auc)).collect();
    let mut out = Vec::new();
    for method in [Method::ElandItr, Method::ElandE2e] {
        let mut cells = 0;
        let mut passed = 0;
        for r in rows.iter().filter(|r| r.method == method) {
            if let Some(&b) = base.get(&(r.fraction.to_bits(), r.seed)) {
                cells += 1;
                passed += (r.auc >= b) as usize;
            }
        }
        if cells > 0 {
            out.push(PredicateSummary { method, baseline, cells, passed, pass_rate: passed as f64 / cells as f64 });
        }
    }
    out
}

/// Trains every `(fraction, method, seed)` cell, on up to `cfg.workers`
/// threads, and evaluates the early-detection predicate.
pub fn early_sweep(
    ds: &Dataset,
    fractions: &[f64],
    methods: &[Method],
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<SweepResult> {
    if let Some(p) = fractions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Parameter(format!("fraction {p} outside (0, 1]")));
    }
    let cells: Vec<(f64, Method, u64)> = fractions
        .iter()
        .flat_map(|&p| methods.iter().flat_map(move |&m| seeds.iter().map(move |&s| (p, m, s))))
        .collect();
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<Result<RunOutcome>>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(p, m, s)) = cells.get(i) else { break };
                let r = run_method(ds, p, m, s, cfg);
                done.lock().expect("no panics while holding the lock").push(r);
            });
        }
    });
    let mut outcomes = done.into_inner().expect("workers joined").into_iter().collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|a, b| {
        a.fraction.total_cmp(&b.fraction).then(a.method.cmp(&b.method)).then(a.seed.cmp(&b.seed))
    });
    let rows: Vec<SweepRow> = outcomes
        .iter()
        .map(|o| SweepRow { fraction: o.fraction, method: o.method, seed: o.seed, auc: o.auc, ap: o.ap })
        .collect();
    let predicate = predicate_summary(&rows, cfg.detector.variant);
    Ok(SweepResult { rows, predicate, outcomes })
}
