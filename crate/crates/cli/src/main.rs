use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eland::datagen::{generate, Dataset};
use eland::eval::{auc, average_precision, early_sweep, run_method, ExperimentConfig, Method, SweepRow};
use eland::graph::io::read_labels;

#[derive(Parser)]
#[command(name = "eland", version, about = "Early graph anomaly detection with action sequence augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model seed (the generator seed for `generate`).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset directory written by `generate`; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method at one fraction and score the test users.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        fractions: Vec<f64>,
        #[arg(long, default_value = "eland-e2e")]
        method: Method,
    },
    /// Every fraction × method × seed, with the early-detection predicate.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.4,1.0")]
        fractions: Vec<f64>,
        /// Repeatable; all methods when absent.
        #[arg(long)]
        method: Vec<Method>,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Write the predicted items an ELAND method adds, one JSON line per user.
    AugmentDump {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        fractions: Vec<f64>,
        #[arg(long, default_value = "eland-e2e")]
        method: Method,
    },
    /// AUC and AP of a `user,score` file.
    Metrics {
        /// CSV with header `user,score`.
        #[arg(long)]
        scores: PathBuf,
        /// Labels CSV; every scored user is evaluated.
        #[arg(long, conflicts_with = "data")]
        labels: Option<PathBuf>,
        /// Dataset directory; the test split is evaluated.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    config: &'a ExperimentConfig,
    config_fingerprint: String,
    seeds: Vec<u64>,
    wall_seconds: f64,
    #[serde(flatten)]
    details: T,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let cfg: ExperimentConfig = match path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(BufReader::new(f)).map_err(|e| eland::Error::Format(format!("config: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(data: &DataArg, cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    Ok(match &data.data {
        Some(dir) => Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?,
        None => generate(&cfg.generator)?,
    })
}

fn single_fraction(fractions: &[f64]) -> anyhow::Result<f64> {
    match fractions {
        [p] => Ok(*p),
        _ => Err(eland::Error::Config(format!("expected exactly one fraction, got {}", fractions.len())).into()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn write_scores(path: &Path, scores: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user", "score"])?;
    for (u, s) in scores.iter().enumerate() {
        w.write_record([u.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening scores {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<(usize, f64)>().enumerate() {
        let rec = rec.map_err(|e| eland::Error::Validation { index: i, reason: format!("scores row: {e}") })?;
        out.push(rec);
    }
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Generate { common } => {
            let mut cfg = load_config(common.config.as_deref())?;
            cfg.generator.seed = common.seed;
            let ds = generate(&cfg.generator)?;
            ds.save(&common.out)?;
            #[derive(Serialize)]
            struct Counts {
                users: usize,
                items: usize,
                actions: usize,
                anomalies: usize,
            }
            let details = Counts {
                users: ds.n_users(),
                items: ds.item_features.rows(),
                actions: ds.actions.len(),
                anomalies: ds.labels.iter().filter(|&&y| y == 1).count(),
            };
            let m = Manifest {
                command: "generate",
                config: &cfg,
                config_fingerprint: cfg.fingerprint(),
                seeds: vec![common.seed],
                wall_seconds: start.elapsed().as_secs_f64(),
                details,
            };
            write_json(&common.out.join("manifest.json"), &m)?;
        }
        Command::Train { common, data, fractions, method } => {
            let cfg = load_config(common.config.as_deref())?;
            let ds = load_dataset(&data, &cfg)?;
            let p = single_fraction(&fractions)?;
            let o = run_method(&ds, p, method, common.seed, &cfg)?;
            fs::create_dir_all(&common.out)?;
            let mut w = csv::Writer::from_path(common.out.join("metrics.csv"))?;
            w.serialize(SweepRow { fraction: p, method, seed: common.seed, auc: o.auc, ap: o.ap })?;
            w.flush()?;
            write_scores(&common.out.join("scores.csv"), &o.suspiciousness)?;
            #[derive(Serialize)]
            struct Details<'a> {
                method: Method,
                fraction: f64,
                auc: f64,
                ap: f64,
                val_auc_per_iteration: &'a [f64],
                loss_per_epoch: &'a [f64],
            }
            let details = Details {
                method,
                fraction: p,
                auc: o.auc,
                ap: o.ap,
                val_auc_per_iteration: &o.val_auc,
                loss_per_epoch: &o.losses,
            };
            let m = Manifest {
                command: "train",
                config: &cfg,
                config_fingerprint: cfg.fingerprint(),
                seeds: vec![common.seed],
                wall_seconds: start.elapsed().as_secs_f64(),
                details,
            };
            write_json(&common.out.join("manifest.json"), &m)?;
            println!("{method} p={p} seed={}: AUC {:.4} AP {:.4}", common.seed, o.auc, o.ap);
        }
        Command::Sweep { common, data, fractions, method, seeds } => {
            let cfg = load_config(common.config.as_deref())?;
            let ds = load_dataset(&data, &cfg)?;
            let methods = if method.is_empty() { Method::ALL.to_vec() } else { method };
            let seed_list: Vec<u64> = (common.seed..common.seed + seeds).collect();
            let r = early_sweep(&ds, &fractions, &methods, &seed_list, &cfg)?;
            fs::create_dir_all(&common.out)?;
            r.write_csv(File::create(common.out.join("sweep.csv"))?)?;
            for &m in &methods {
                r.write_curve(m, File::create(common.out.join(format!("curve_{}.csv", m.name())))?)?;
            }
            #[derive(Serialize)]
            struct Timing {
                fraction: f64,
                method: Method,
                seed: u64,
                wall_seconds: f64,
            }
            #[derive(Serialize)]
            struct Details<'a> {
                fractions: &'a [f64],
                methods: &'a [Method],
                predicate: &'a [eland::eval::PredicateSummary],
                cells: Vec<Timing>,
            }
            let cells = r
                .outcomes
                .iter()
                .map(|o| Timing { fraction: o.fraction, method: o.method, seed: o.seed, wall_seconds: o.wall_seconds })
                .collect();
            let details = Details { fractions: &fractions, methods: &methods, predicate: &r.predicate, cells };
            let m = Manifest {
                command: "sweep",
                config: &cfg,
                config_fingerprint: cfg.fingerprint(),
                seeds: seed_list,
                wall_seconds: start.elapsed().as_secs_f64(),
                details,
            };
            write_json(&common.out.join("manifest.json"), &m)?;
            for s in &r.predicate {
                println!("{} vs {}: predicate holds in {}/{} cells", s.method, s.baseline, s.passed, s.cells);
            }
        }
        Command::AugmentDump { common, data, fractions, method } => {
            if !method.is_eland() {
                return Err(eland::Error::Config(format!("{method} does not augment; use eland-itr or eland-e2e")).into());
            }
            let cfg = load_config(common.config.as_deref())?;
            let ds = load_dataset(&data, &cfg)?;
            let p = single_fraction(&fractions)?;
            let o = run_method(&ds, p, method, common.seed, &cfg)?;
            fs::create_dir_all(&common.out)?;
            let plan = o.plan.unwrap_or_default();
            plan.write_jsonl(BufWriter::new(File::create(common.out.join("augmentations.jsonl"))?))?;
            #[derive(Serialize)]
            struct Details {
                method: Method,
                fraction: f64,
                users: usize,
                predicted_actions: usize,
            }
            let details = Details { method, fraction: p, users: plan.budgets.len(), predicted_actions: plan.total_predictions() };
            let m = Manifest {
                command: "augment-dump",
                config: &cfg,
                config_fingerprint: cfg.fingerprint(),
                seeds: vec![common.seed],
                wall_seconds: start.elapsed().as_secs_f64(),
                details,
            };
            write_json(&common.out.join("manifest.json"), &m)?;
        }
        Command::Metrics { scores, labels, data, out } => {
            let scored = read_scores(&scores)?;
            let (labels, users): (Vec<u8>, Option<Vec<usize>>) = match (labels, data) {
                (Some(path), None) => {
                    let m = scored.iter().map(|&(u, _)| u + 1).max().unwrap_or(0);
                    (read_labels(File::open(&path)?, m)?, None)
                }
                (None, Some(dir)) => {
                    let ds = Dataset::load(&dir)?;
                    (ds.labels, Some(ds.split.test))
                }
                _ => bail!(eland::Error::Config("pass exactly one of --labels or --data".into())),
            };
            let by_user: std::collections::BTreeMap<usize, f64> = scored.into_iter().collect();
            let users = users.unwrap_or_else(|| by_user.keys().copied().collect());
            let mut s = Vec::with_capacity(users.len());
            let mut y = Vec::with_capacity(users.len());
            for u in users {
                let score = by_user
                    .get(&u)
                    .ok_or_else(|| eland::Error::Validation { index: u, reason: format!("no score for user {u}") })?;
                let label = labels
                    .get(u)
                    .ok_or_else(|| eland::Error::Validation { index: u, reason: format!("no label for user {u}") })?;
                s.push(*score);
                y.push(*label);
            }
            let a = auc(&s, &y)?;
            let ap = average_precision(&s, &y)?;
            println!("AUC {a:.6} AP {ap:.6}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
                w.write_record(["auc", "ap"])?;
                w.write_record([a.to_string(), ap.to_string()])?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

/// 2 for invalid input or configuration, 3 when a metric is undefined, 1
/// otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<eland::Error>() {
            return match e {
                eland::Error::MetricUndefined(_) => 3,
                eland::Error::Validation { .. }
                | eland::Error::Config(_)
                | eland::Error::Parameter(_)
                | eland::Error::Format(_)
                | eland::Error::Dimension { .. }
                | eland::Error::Json(_)
                | eland::Error::Csv(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
