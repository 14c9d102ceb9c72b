//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pad_core::nets::{Head, MlpConfig};
use pad_core::train::{Method, PadConfig, TrainConfig, TrainSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tune::TuneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyName {
    GapSine,
    TwoManifold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Headed CSV, last column the label. Relative paths resolve against the config file.
    Csv(PathBuf),
    Toy {
        name: ToyName,
        #[serde(default = "default_toy_size")]
        n_per: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_toy_size() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Monte Carlo passes per prediction for MC-dropout models.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Confidence bins for ECE.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// CDF levels for regression calibration error.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_samples() -> usize {
    50
}
fn default_bins() -> usize {
    pad_core::metrics::DEFAULT_ECE_BINS
}
fn default_levels() -> usize {
    pad_core::metrics::DEFAULT_CALIBRATION_LEVELS
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            bins: default_bins(),
            levels: default_levels(),
        }
    }
}

/// How shifted splits are produced when no split files are given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Number of splits, with split seeds `0..count`.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_min_test")]
    pub min_test_frac: f64,
    /// Fraction of training rows held back for in-distribution evaluation.
    #[serde(default = "default_holdout")]
    pub holdout_frac: f64,
    #[serde(default)]
    pub cluster_seed: u64,
}

fn default_k() -> usize {
    10
}
fn default_count() -> usize {
    10
}
fn default_min_test() -> f64 {
    0.2
}
fn default_holdout() -> f64 {
    0.1
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            count: default_count(),
            min_test_frac: default_min_test(),
            holdout_frac: default_holdout(),
            cluster_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub data: DataSource,
    pub model: MlpConfig,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<PadConfig>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Standardize regression targets on the training split.
    #[serde(default = "default_true")]
    pub standardize_target: bool,
    /// Optional per-split grid search; absent means the configured values are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneConfig>,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let DataSource::Csv(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            model: self.model.clone(),
            method: self.method,
            training: self.training.clone(),
            pad: self.pad.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match (self.task, self.model.head) {
            (Task::Regression, Head::Gaussian) | (Task::Classification, Head::Categorical { .. }) => {}
            (t, h) => bail!("model.head: {h:?} does not fit task {t:?}"),
        }
        self.train_spec().validate()?;
        if self.eval.samples == 0 {
            bail!("eval.samples must be at least 1");
        }
        if self.eval.bins == 0 || self.eval.levels == 0 {
            bail!("eval.bins and eval.levels must be at least 1");
        }
        if self.split.k < 2 {
            bail!("split.k must be at least 2");
        }
        if self.split.count == 0 {
            bail!("split.count must be at least 1");
        }
        if !(self.split.min_test_frac > 0.0 && self.split.min_test_frac < 1.0) {
            bail!("split.min_test_frac must lie in (0, 1)");
        }
        if !(0.0..0.5).contains(&self.split.holdout_frac) {
            bail!("split.holdout_frac must lie in [0, 0.5)");
        }
        if let Some(t) = &self.tune {
            t.validate(self.method.is_pad())?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
