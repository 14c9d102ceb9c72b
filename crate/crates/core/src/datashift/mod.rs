//! Datasets, feature scaling, cluster-based shifted splits and toy data.

mod eigen;
mod kmeans;
mod spectral;
mod split;
mod synth;

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub use eigen::{symmetric_eigen, SymmetricEigen, MAX_SWEEPS};
pub use kmeans::{kmeans, KMeansFit};
pub use spectral::{
    adjusted_rand_index, median_pairwise_distance, spectral_clusters, spectral_clusters_with_limit, SUBSAMPLE_LIMIT,
};
pub use split::{make_ood_split, SplitSpec};
pub use synth::{gap_sine_target, gen_blobs, gen_gap_sine, gen_two_manifold, GapSine, GAP, GAP_SINE_NOISE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Feature scaler already applied to `x`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
}

impl Dataset {
    /// Checks shapes, finiteness and `N >= 2`. Feature names default to `x0, x1, ...`.
    pub fn new(x: Tensor, y: Vec<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(invalid!("{} feature rows but {} labels", x.rows(), y.len()));
        }
        if x.rows() < 2 {
            return Err(invalid!("a dataset needs at least 2 rows, got {}", x.rows()));
        }
        if let Some(i) = x.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { coord: i });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                coord: x.data().len() + i,
            });
        }
        let feature_names = match feature_names {
            Some(n) if n.len() != x.cols() => {
                return Err(invalid!("{} feature names for {} columns", n.len(), x.cols()))
            }
            Some(n) => n,
            None => (0..x.cols()).map(|j| format!("x{j}")).collect(),
        };
        Ok(Self {
            x,
            y,
            feature_names,
            scaler: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(invalid!("row {i} out of range for {} rows", self.len()));
        }
        let mut out = Self::new(
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
            Some(self.feature_names.clone()),
        )?;
        out.scaler = self.scaler.clone();
        Ok(out)
    }

    /// Number of classes if every label is a nonnegative integer.
    pub fn class_count(&self) -> Option<usize> {
        let mut max = 0usize;
        for &y in &self.y {
            if !(y >= 0.0) || libm::trunc(y) != y {
                return None;
            }
            max = max.max(y as usize);
        }
        Some(max + 1)
    }

    /// Per-feature `(min, max)`.
    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim()];
        for i in 0..self.len() {
            for (j, &v) in self.x.row_slice(i).iter().enumerate() {
                r[j].0 = r[j].0.min(v);
                r[j].1 = r[j].1.max(v);
            }
        }
        r
    }
}

/// Per-column affine standardization. Columns with zero spread map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation of each column of `x`.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rows() == 0 {
            return Err(invalid!("cannot fit a scaler on zero rows"));
        }
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row_slice(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| libm::sqrt(s / n)).collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(invalid!(
                "scaler fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            ));
        }
        Ok(Tensor::from_fn(x.rows(), x.cols(), |i, j| {
            if self.std[j] > 0.0 {
                (x.get(i, j) - self.mean[j]) / self.std[j]
            } else {
                0.0
            }
        }))
    }

    /// Maps a single standardized value of column `j` back to raw units.
    pub fn inverse_value(&self, j: usize, v: f64) -> f64 {
        v * self.std[j] + self.mean[j]
    }
}

/// Fits a scaler on `train` and applies it to `train` and every `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Scaler, Dataset, Vec<Dataset>)> {
    let scaler = Scaler::fit(&train.x)?;
    let apply = |d: &Dataset| -> Result<Dataset> {
        let mut out = d.clone();
        out.x = scaler.transform(&d.x)?;
        out.scaler = Some(scaler.clone());
        Ok(out)
    };
    let t = apply(train)?;
    let rest = others.iter().map(|d| apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((scaler, t, rest))
}
