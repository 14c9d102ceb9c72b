//! Per-split hyperparameter selection over a small grid.
//!
//! Baselines are scored on a random validation slice of the training rows.
//! PAD methods use two folds, each validating on half of the training
//! clusters, so candidates are scored on shifted data.

use anyhow::bail;
use pad_core::datashift::Dataset;
use pad_core::metrics::nll;
use pad_core::objectives::Boundary;
use pad_core::rng::{stream, Stream};
use pad_core::train::TrainSpec;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::experiment::predict_raw;

/// Candidate values per field. An empty list keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default)]
    pub lr_f: Vec<f64>,
    #[serde(default)]
    pub dropout_p: Vec<f64>,
    #[serde(default)]
    pub length_scale: Vec<f64>,
    #[serde(default)]
    pub c_boundary: Vec<f64>,
    #[serde(default)]
    pub max_temperature: Vec<f64>,
    /// Validation share of the random split used for baselines.
    #[serde(default = "default_validation_frac")]
    pub validation_frac: f64,
}

fn default_validation_frac() -> f64 {
    0.2
}

impl TuneConfig {
    pub fn validate(&self, is_pad: bool) -> anyhow::Result<()> {
        if !(self.validation_frac > 0.0 && self.validation_frac < 1.0) {
            bail!("tune.validation_frac must lie in (0, 1)");
        }
        let pad_only = [
            ("length_scale", &self.length_scale),
            ("c_boundary", &self.c_boundary),
            ("max_temperature", &self.max_temperature),
        ];
        for (name, values) in pad_only {
            if !is_pad && !values.is_empty() {
                bail!("tune.{name} needs a PAD method");
            }
        }
        let checks: [Check; 5] = [
            ("lr_f", &self.lr_f, |v| v > 0.0),
            ("dropout_p", &self.dropout_p, |v| (0.0..1.0).contains(&v)),
            ("length_scale", &self.length_scale, |v| v > 0.0),
            ("c_boundary", &self.c_boundary, |v| v >= 0.0),
            ("max_temperature", &self.max_temperature, |v| v > 1.0),
        ];
        for (name, values, ok) in checks {
            if let Some(v) = values.iter().find(|&&v| !ok(v)) {
                bail!("tune.{name}: value {v} out of range");
            }
        }
        Ok(())
    }

    /// Every combination of the listed values, first field varying slowest.
    pub fn candidates(&self) -> Vec<Candidate> {
        fn options(v: &[f64]) -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for &lr_f in &options(&self.lr_f) {
            for &dropout_p in &options(&self.dropout_p) {
                for &length_scale in &options(&self.length_scale) {
                    for &c_boundary in &options(&self.c_boundary) {
                        for &max_temperature in &options(&self.max_temperature) {
                            out.push(Candidate {
                                lr_f,
                                dropout_p,
                                length_scale,
                                c_boundary,
                                max_temperature,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid point; unset fields keep the configured value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_boundary: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_temperature: Option<f64>,
}

impl Candidate {
    pub fn apply(&self, spec: &mut TrainSpec) {
        if let Some(v) = self.lr_f {
            spec.training.lr_f = Some(v);
        }
        if let Some(v) = self.dropout_p {
            spec.model.dropout_p = v;
        }
        if let Some(pad) = spec.pad.as_mut() {
            if let Some(v) = self.length_scale {
                pad.hyper.length_scale = v;
            }
            if let Some(v) = self.c_boundary {
                pad.hyper.c_boundary = Boundary::Fixed(v);
            }
            if let Some(v) = self.max_temperature {
                pad.hyper.max_temperature = v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    RandomHoldout,
    ClusterFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub candidate: Candidate,
    /// Mean validation NLL over folds, in training target units.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub protocol: Protocol,
    pub chosen: Candidate,
    pub scores: Vec<Scored>,
}

/// Field name, values and range test.
type Check<'a> = (&'static str, &'a Vec<f64>, fn(f64) -> bool);

/// Fit and validation rows.
type Fold = (Vec<usize>, Vec<usize>);

/// Train/validation row pairs over `clusters.len()` training rows.
fn folds(clusters: &[usize], by_cluster: bool, validation_frac: f64, seed: u64) -> (Protocol, Vec<Fold>) {
    let mut rng = stream(seed, Stream::Split);
    let n = clusters.len();
    let mut ids: Vec<usize> = clusters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if by_cluster && ids.len() >= 2 {
        ids.shuffle(&mut rng);
        let half = &ids[..ids.len().div_ceil(2)];
        let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| half.contains(&clusters[i]));
        return (Protocol::ClusterFolds, vec![(b.clone(), a.clone()), (a, b)]);
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let n_val = ((validation_frac * n as f64).ceil() as usize).clamp(1, n.saturating_sub(2).max(1));
    let mut val = rows[..n_val].to_vec();
    let mut fit = rows[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (Protocol::RandomHoldout, vec![(fit, val)])
}

/// Scores every candidate of `tune` on `train` and returns the one with the
/// lowest validation NLL; ties go to the earlier candidate. `clusters` gives
/// the cluster of every training row.
pub fn select(
    tune: &TuneConfig,
    spec: &TrainSpec,
    train: &Dataset,
    clusters: &[usize],
    samples: usize,
    seed: u64,
) -> anyhow::Result<TuneOutcome> {
    if clusters.len() != train.len() {
        bail!("{} cluster labels for {} training rows", clusters.len(), train.len());
    }
    let (protocol, folds) = folds(clusters, spec.method.is_pad(), tune.validation_frac, seed);
    let parts = folds
        .iter()
        .map(|(fit, val)| Ok((train.subset(fit)?, train.subset(val)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let scores = tune
        .candidates()
        .into_par_iter()
        .map(|candidate| {
            let mut s = spec.clone();
            candidate.apply(&mut s);
            s.validate()?;
            let mut total = 0.0;
            for (fit, val) in &parts {
                let p = crate::experiment::train_parallel(&s, fit)?;
                let preds = predict_raw(&p, &val.x, None, samples, seed)?;
                total += nll(&preds, &val.y)?;
            }
            Ok(Scored {
                candidate,
                score: total / parts.len() as f64,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(i.cmp(j)))
        .map(|(_, s)| s.candidate)
        .unwrap_or_default();
    Ok(TuneOutcome {
        protocol,
        chosen: best,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_product() {
        let t = TuneConfig {
            lr_f: vec![1e-3, 1e-2],
            length_scale: vec![0.1, 0.2, 0.5],
            ..Default::default()
        };
        let c = t.candidates();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].lr_f, Some(1e-3));
        assert_eq!(c[2].length_scale, Some(0.5));
        assert!(c.iter().all(|c| c.dropout_p.is_none()));
        assert_eq!(TuneConfig::default().candidates(), vec![Candidate::default()]);
    }

    #[test]
    fn validation_rules() {
        let mut t = TuneConfig {
            validation_frac: 0.2,
            length_scale: vec![0.3],
            ..Default::default()
        };
        assert!(t.validate(true).is_ok());
        assert!(t.validate(false).is_err());
        t.length_scale = vec![-1.0];
        assert!(t.validate(true).is_err());
        t.length_scale.clear();
        t.validation_frac = 1.0;
        assert!(t.validate(true).is_err());
    }

    #[test]
    fn cluster_folds_swap_halves() {
        let clusters = [0, 1, 2, 3, 0, 1, 2, 3, 4];
        let (p, f) = folds(&clusters, true, 0.2, 3);
        assert_eq!(p, Protocol::ClusterFolds);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].0, f[1].1);
        assert_eq!(f[0].1, f[1].0);
        for (fit, val) in &f {
            assert!(fit.iter().all(|&i| val.iter().all(|&j| clusters[i] != clusters[j])));
            assert_eq!(fit.len() + val.len(), clusters.len());
        }
    }

    #[test]
    fn random_holdout_for_baselines_and_single_clusters() {
        let (p, f) = folds(&[0; 10], true, 0.2, 1);
        assert_eq!(p, Protocol::RandomHoldout);
        assert_eq!(f[0].1.len(), 2);
        assert_eq!(f[0].0.len(), 8);
        let (p, _) = folds(&[0, 1, 0, 1], false, 0.5, 1);
        assert_eq!(p, Protocol::RandomHoldout);
    }
}
