//! Multi-split experiments: data preparation, training, evaluation, persistence.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use pad_core::datashift::{
    gen_gap_sine, gen_two_manifold, make_ood_split, spectral_clusters, Dataset, Scaler, SplitSpec,
};
use pad_core::metrics::{evaluate, MetricReport};
use pad_core::nets::PredictiveDistribution;
use pad_core::rng::{member_seed, stream, Stream};
use pad_core::train::{train_member, EpochLog, Predictor, TrainSpec};
use pad_core::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, EvalConfig, ExperimentConfig, Task, ToyName};
use crate::csvio::{load_csv, write_text_table};
use crate::tune::{self, TuneOutcome};

pub fn load_dataset(source: &DataSource) -> anyhow::Result<Dataset> {
    Ok(match source {
        DataSource::Csv(path) => load_csv(path)?,
        DataSource::Toy {
            name: ToyName::GapSine,
            n_per,
            seed,
        } => gen_gap_sine(*n_per, *n_per, *seed)?,
        DataSource::Toy {
            name: ToyName::TwoManifold,
            n_per,
            seed,
        } => gen_two_manifold(*n_per, *seed)?.0,
    })
}

/// Clusters standardized features once, then draws `count` shifted splits
/// with split seeds `0..count`.
pub fn make_splits(
    data: &Dataset,
    k: usize,
    count: usize,
    min_test_frac: f64,
    cluster_seed: u64,
) -> anyhow::Result<Vec<SplitSpec>> {
    let x = Scaler::fit(&data.x)?.transform(&data.x)?;
    let assignments = spectral_clusters(&x, k, cluster_seed)?;
    (0..count as u64)
        .map(|s| Ok(make_ood_split(&assignments, k, min_test_frac, s)?))
        .collect()
}

/// Train, in-distribution holdout and shifted test sets of one split.
/// Features are standardized with training statistics; training targets are
/// standardized when `y_scaler` is set, evaluation targets stay raw.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    /// Dataset rows of `train`, in order.
    pub train_idx: Vec<usize>,
    pub holdout: Option<Dataset>,
    pub test: Dataset,
    pub x_scaler: Scaler,
    pub y_scaler: Option<Scaler>,
}

pub fn prepare(
    data: &Dataset,
    split: &SplitSpec,
    holdout_frac: f64,
    seed: u64,
    standardize_target: bool,
) -> anyhow::Result<Prepared> {
    if split.assignments.len() != data.len() {
        anyhow::bail!(
            "split covers {} points, dataset has {}",
            split.assignments.len(),
            data.len()
        );
    }
    let mut train_idx = split.train_idx.clone();
    let n_hold = (holdout_frac * train_idx.len() as f64).ceil() as usize;
    let holdout_idx = if n_hold > 0 {
        train_idx.shuffle(&mut stream(seed, Stream::Holdout));
        let h: Vec<usize> = train_idx.drain(..n_hold.max(2)).collect();
        train_idx.sort_unstable();
        Some(h)
    } else {
        None
    };
    let raw_train = data.subset(&train_idx)?;
    let x_scaler = Scaler::fit(&raw_train.x)?;
    let scale = |d: Dataset| -> anyhow::Result<Dataset> {
        let mut d = d;
        d.x = x_scaler.transform(&d.x)?;
        d.scaler = Some(x_scaler.clone());
        Ok(d)
    };
    let y_scaler = if standardize_target {
        Some(Scaler::fit(&Tensor::column(&raw_train.y))?)
    } else {
        None
    };
    let mut train = scale(raw_train)?;
    if let Some(ys) = &y_scaler {
        train.y = ys.transform(&Tensor::column(&train.y))?.into_vec();
    }
    let holdout = match holdout_idx {
        Some(h) => Some(scale(data.subset(&h)?)?),
        None => None,
    };
    let test = scale(data.subset(&split.test_idx)?)?;
    Ok(Prepared {
        train,
        train_idx,
        holdout,
        test,
        x_scaler,
        y_scaler,
    })
}

/// Predictions in raw target units.
pub fn predict_raw(
    predictor: &Predictor,
    x: &Tensor,
    y_scaler: Option<&Scaler>,
    samples: usize,
    seed: u64,
) -> anyhow::Result<Vec<PredictiveDistribution>> {
    let preds = predictor.predict(x, samples, &mut stream(seed, Stream::Eval))?;
    Ok(match y_scaler {
        Some(s) => preds
            .into_iter()
            .map(|p| match p {
                PredictiveDistribution::Mixture(m) => PredictiveDistribution::Mixture(m.affine(s.mean[0], s.std[0])),
                other => other,
            })
            .collect(),
        None => preds,
    })
}

/// Metrics on already-standardized features `x` and raw targets `y`. Every
/// call restarts the evaluation stream of `seed`, so results are reproducible.
pub fn evaluate_predictor(
    predictor: &Predictor,
    x: &Tensor,
    y: &[f64],
    y_scaler: Option<&Scaler>,
    eval: &EvalConfig,
    seed: u64,
) -> anyhow::Result<MetricReport> {
    let preds = predict_raw(predictor, x, y_scaler, eval.samples, seed)?;
    Ok(evaluate(&preds, y, eval.levels, eval.bins)?)
}

/// Trains all members of `spec` concurrently.
pub fn train_parallel(spec: &TrainSpec, data: &Dataset) -> anyhow::Result<Predictor> {
    spec.validate()?;
    let members = (0..spec.members())
        .into_par_iter()
        .map(|i| train_member(spec, data, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Predictor {
        method: spec.method,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub split_index: usize,
    pub split_seed: u64,
    pub seed: u64,
    /// Per-epoch losses of every member.
    pub logs: Vec<Vec<EpochLog>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<MetricReport>,
    pub ood: MetricReport,
    pub param_checksums: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuneOutcome>,
    /// SHA-256 over everything above; equal across reruns of the same config and seed.
    pub digest: String,
    pub wall_time_secs: f64,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    config_hash: &'a str,
    split_index: usize,
    split_seed: u64,
    seed: u64,
    logs: &'a [Vec<EpochLog>],
    holdout: &'a Option<MetricReport>,
    ood: &'a MetricReport,
    param_checksums: &'a [u64],
    #[serde(skip_serializing_if = "Option::is_none")]
    tuning: &'a Option<TuneOutcome>,
}

/// Trains and evaluates on split `index`; the run seed is derived from the
/// training seed and the split index.
pub fn run_split(
    cfg: &ExperimentConfig,
    data: &Dataset,
    split: &SplitSpec,
    index: usize,
) -> anyhow::Result<(RunResult, Checkpoint)> {
    let start = Instant::now();
    let seed = member_seed(cfg.training.seed, index);
    let standardize = cfg.standardize_target && cfg.task == Task::Regression;
    let prep = prepare(data, split, cfg.split.holdout_frac, seed, standardize)?;
    let mut spec = cfg.train_spec();
    spec.training.seed = seed;
    let tuning = match &cfg.tune {
        Some(t) => {
            let clusters: Vec<usize> = prep.train_idx.iter().map(|&i| split.assignments[i]).collect();
            let outcome = tune::select(t, &spec, &prep.train, &clusters, cfg.eval.samples, seed)?;
            outcome.chosen.apply(&mut spec);
            Some(outcome)
        }
        None => None,
    };
    let predictor = train_parallel(&spec, &prep.train)?;
    let ys = prep.y_scaler.as_ref();
    let holdout = match &prep.holdout {
        Some(h) => Some(evaluate_predictor(&predictor, &h.x, &h.y, ys, &cfg.eval, seed)?),
        None => None,
    };
    let ood = evaluate_predictor(&predictor, &prep.test.x, &prep.test.y, ys, &cfg.eval, seed)?;
    let logs: Vec<Vec<EpochLog>> = predictor.members.iter().map(|m| m.log.clone()).collect();
    let param_checksums: Vec<u64> = predictor
        .members
        .iter()
        .flat_map(|m| {
            std::iter::once(m.model.params().checksum()).chain(m.generator.as_ref().map(|g| g.params().checksum()))
        })
        .collect();
    let config_hash = cfg.hash();
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&DigestInput {
        config_hash: &config_hash,
        split_index: index,
        split_seed: split.seed,
        seed,
        logs: &logs,
        holdout: &holdout,
        ood: &ood,
        param_checksums: &param_checksums,
        tuning: &tuning,
    })?));
    let checkpoint = Checkpoint::new(&spec, seed, cfg.eval, prep.x_scaler, prep.y_scaler, &predictor);
    Ok((
        RunResult {
            config_hash,
            split_index: index,
            split_seed: split.seed,
            seed,
            logs,
            holdout,
            ood,
            param_checksums,
            tuning,
            digest,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
        checkpoint,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub split_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub succeeded: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn metric_fields(prefix: &str, r: &MetricReport) -> Vec<(String, f64)> {
    let mut out = vec![(format!("{prefix}.nll"), r.nll)];
    for (name, v) in [("cal_error", r.cal_error), ("ece", r.ece), ("accuracy", r.accuracy)] {
        if let Some(v) = v {
            out.push((format!("{prefix}.{name}"), v));
        }
    }
    out
}

fn run_fields(r: &RunResult) -> Vec<(String, f64)> {
    let mut out = metric_fields("ood", &r.ood);
    if let Some(h) = &r.holdout {
        out.extend(metric_fields("holdout", h));
    }
    out
}

pub fn aggregate(results: &[RunResult], failed: usize) -> Aggregate {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        for (k, v) in run_fields(r) {
            cols.entry(k).or_default().push(v);
        }
    }
    Aggregate {
        succeeded: results.len(),
        failed,
        metrics: cols.into_iter().map(|(k, v)| (k, mean_std(&v))).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub checkpoints: Vec<Checkpoint>,
    pub failures: Vec<SplitFailure>,
    pub aggregate: Aggregate,
}

/// One run per split, in parallel. Failed splits are recorded and left out
/// of the aggregate.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    splits: &[SplitSpec],
) -> anyhow::Result<ExperimentOutcome> {
    if splits.is_empty() {
        anyhow::bail!("an experiment needs at least one split");
    }
    cfg.validate()?;
    let outcomes: Vec<anyhow::Result<(RunResult, Checkpoint)>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_split(cfg, data, s, i))
        .collect();
    let mut results = Vec::new();
    let mut checkpoints = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((r, c)) => {
                results.push(r);
                checkpoints.push(c);
            }
            Err(e) => failures.push(SplitFailure {
                split_index: i,
                error: format!("{e:#}"),
            }),
        }
    }
    let aggregate = aggregate(&results, failures.len());
    Ok(ExperimentOutcome {
        results,
        checkpoints,
        failures,
        aggregate,
    })
}

/// Writes `run_<i>.json`, `checkpoint_<i>.json`, `metrics.csv`,
/// `aggregate.json` and, if any split failed, `failures.json` into `dir`.
pub fn persist(outcome: &ExperimentOutcome, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (r, c) in outcome.results.iter().zip(&outcome.checkpoints) {
        std::fs::write(
            dir.join(format!("run_{}.json", r.split_index)),
            serde_json::to_vec_pretty(r)?,
        )?;
        c.save(&dir.join(format!("checkpoint_{}.json", r.split_index)))?;
    }
    let names: Vec<String> = outcome.aggregate.metrics.keys().cloned().collect();
    let mut header: Vec<&str> = vec!["split_index", "split_seed", "seed"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = outcome
        .results
        .iter()
        .map(|r| {
            let fields: BTreeMap<String, f64> = run_fields(r).into_iter().collect();
            let mut row = vec![r.split_index.to_string(), r.split_seed.to_string(), r.seed.to_string()];
            row.extend(
                names
                    .iter()
                    .map(|n| fields.get(n).map_or(String::new(), |v| v.to_string())),
            );
            row
        })
        .collect();
    write_text_table(&dir.join("metrics.csv"), &header, &rows)?;
    std::fs::write(
        dir.join("aggregate.json"),
        serde_json::to_vec_pretty(&outcome.aggregate)?,
    )?;
    if !outcome.failures.is_empty() {
        std::fs::write(dir.join("failures.json"), serde_json::to_vec_pretty(&outcome.failures)?)?;
    }
    Ok(())
}
