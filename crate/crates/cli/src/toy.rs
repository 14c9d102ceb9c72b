//! Gapped-sine toy runs and their predictive grids.

use std::path::Path;

use pad_core::datashift::{gen_gap_sine, standardize, Scaler};
use pad_core::nets::{Head, MlpConfig};
use pad_core::train::{Method, PadConfig, TrainConfig, TrainSpec};
use pad_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::csvio::write_table;
use crate::experiment::{predict_raw, train_parallel};

pub const GRID_START: f64 = -0.2;
pub const GRID_STEP: f64 = 0.005;
pub const GRID_POINTS: usize = 281;
/// Open interval inside the gap over which gap uncertainty is averaged.
pub const GAP_PROBE: (f64, f64) = (0.45, 0.75);
pub const TOY_LENGTH_SCALE: f64 = 0.2;
pub const TOY_SAMPLES: usize = 50;

pub fn grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|i| GRID_START + GRID_STEP * i as f64).collect()
}

/// Preset for the gapped sine: standard MLP, Adam at 5e-3, 50 epochs and, for
/// PAD methods, a length scale of 0.2 in standardized units.
pub fn toy_spec(method: Method, seed: u64) -> TrainSpec {
    let pad = method.is_pad().then(|| {
        let mut p = PadConfig::default();
        p.hyper.length_scale = TOY_LENGTH_SCALE;
        p
    });
    TrainSpec {
        model: MlpConfig::standard(1, Head::Gaussian),
        method,
        training: TrainConfig {
            lr_f: Some(5e-3),
            seed,
            ..TrainConfig::default()
        },
        pad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub method: Method,
    pub seed: u64,
    pub grid: Vec<GridRow>,
    /// Mean predictive std over grid points inside [`GAP_PROBE`].
    pub gap_std: f64,
    /// Mean predictive std over grid points on the training support.
    pub support_std: f64,
}

fn in_support(x: f64) -> bool {
    (0.0..=0.4).contains(&x) || (0.8..=1.0).contains(&x)
}

fn mean_of(rows: &[GridRow], keep: impl Fn(f64) -> bool) -> f64 {
    let picked: Vec<f64> = rows.iter().filter(|r| keep(r.x)).map(|r| r.std).collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

/// Trains `spec` on 100 + 100 gapped-sine points drawn with `seed` and
/// evaluates the predictive mean and std on the grid, in raw units.
pub fn run_toy(spec: &TrainSpec, seed: u64) -> anyhow::Result<ToyRun> {
    let raw = gen_gap_sine(100, 100, seed)?;
    let (x_scaler, mut train, _) = standardize(&raw, &[])?;
    let y_scaler = Scaler::fit(&Tensor::column(&raw.y))?;
    train.y = y_scaler.transform(&Tensor::column(&raw.y))?.into_vec();
    let predictor = train_parallel(spec, &train)?;
    let xs = grid();
    let gx = x_scaler.transform(&Tensor::column(&xs))?;
    let preds = predict_raw(&predictor, &gx, Some(&y_scaler), TOY_SAMPLES, seed)?;
    let rows = xs
        .iter()
        .zip(&preds)
        .map(|(&x, p)| {
            let m = p.as_mixture()?;
            Ok(GridRow {
                x,
                mean: m.mean(),
                std: m.std(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(ToyRun {
        method: spec.method,
        seed,
        gap_std: mean_of(&rows, |x| x > GAP_PROBE.0 && x < GAP_PROBE.1),
        support_std: mean_of(&rows, in_support),
        grid: rows,
    })
}

pub fn write_grid(path: &Path, rows: &[GridRow]) -> anyhow::Result<()> {
    let data: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.x, r.mean, r.std]).collect();
    write_table(path, &["x", "mean", "std"], &data)
}

/// Sibling path for the baseline grid: `grid.csv` becomes `grid_baseline.csv`.
pub fn baseline_path(out: &Path) -> std::path::PathBuf {
    let stem = out
        .file_stem()
        .map_or("grid".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(e) => format!("{stem}_baseline.{}", e.to_string_lossy()),
        None => format!("{stem}_baseline"),
    };
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_interval() {
        let g = grid();
        assert_eq!(g.len(), 281);
        assert_eq!(g[0], -0.2);
        assert!((g[280] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn baseline_sibling() {
        assert_eq!(
            baseline_path(Path::new("/a/grid.csv")),
            Path::new("/a/grid_baseline.csv")
        );
        assert_eq!(baseline_path(Path::new("out")), Path::new("out_baseline"));
    }

    #[test]
    fn short_run_has_finite_grid() {
        let mut spec = toy_spec(Method::PadMcDropout, 3);
        spec.training.epochs = 2;
        let r = run_toy(&spec, 3).unwrap();
        assert_eq!(r.grid.len(), GRID_POINTS);
        assert!(r.grid.iter().all(|g| g.mean.is_finite() && g.std > 0.0));
        assert!(r.gap_std > 0.0 && r.support_std > 0.0);
    }
}
