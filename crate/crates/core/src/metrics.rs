//! Evaluation metrics over predictive distributions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nets::{mixture_cdf, PredictiveDistribution};

/// Floor applied to densities and probabilities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;
pub const DEFAULT_CALIBRATION_LEVELS: usize = 100;
pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nll: f64,
    /// Regression calibration error on the x100 scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cal_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub n_eval: usize,
    pub bins: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid!("{a} predictions for {b} targets"));
    }
    if a == 0 {
        return Err(invalid!("no evaluation points"));
    }
    Ok(())
}

pub(crate) fn class_index(y: f64, classes: usize) -> Result<usize> {
    if !(y >= 0.0) || libm::trunc(y) != y || y as usize >= classes {
        return Err(invalid!("class label {y} outside 0..{classes}"));
    }
    Ok(y as usize)
}

/// Mean negative log predictive density (mixtures) or probability (classes).
pub fn nll(predictions: &[PredictiveDistribution], y: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), y.len())?;
    let mut total = 0.0;
    for (p, &t) in predictions.iter().zip(y) {
        total -= match p {
            PredictiveDistribution::Mixture(m) => m.log_density(t).max(libm::log(DENSITY_FLOOR)),
            PredictiveDistribution::Categorical(probs) => {
                libm::log(probs[class_index(t, probs.len())?].max(DENSITY_FLOOR))
            }
        };
    }
    Ok(total / predictions.len() as f64)
}

/// `100 * (1/m) sum_j (p_j - phat_j)^2` with `p_j = j/m` and `phat_j` the
/// fraction of CDF values at or below `p_j`.
pub fn regression_calibration_error(cdf_values: &[f64], levels: usize) -> Result<f64> {
    if cdf_values.is_empty() {
        return Err(invalid!("no CDF values"));
    }
    if levels == 0 {
        return Err(invalid!("need at least one calibration level"));
    }
    let mut sorted = cdf_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut acc = 0.0;
    for j in 1..=levels {
        let p = j as f64 / levels as f64;
        let below = sorted.partition_point(|&v| v <= p) as f64;
        let d = p - below / n;
        acc += d * d;
    }
    Ok(100.0 * acc / levels as f64)
}

/// CDF value of every target under its predictive mixture.
pub fn cdf_values(predictions: &[PredictiveDistribution], y: &[f64]) -> Result<Vec<f64>> {
    check_lengths(predictions.len(), y.len())?;
    predictions.iter().zip(y).map(|(p, &t)| mixture_cdf(p, t)).collect()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Expected calibration error with `bins` equal-width confidence bins.
pub fn ece(probs: &[Vec<f64>], labels: &[f64], bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if bins == 0 {
        return Err(invalid!("need at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let label = class_index(y, p.len())?;
        let k = argmax(p);
        let c = p[k];
        let b = (libm::ceil(c * bins as f64) as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += c;
        if k == label {
            correct[b] += 1.0;
        }
    }
    let n = probs.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (correct[b] / m - conf[b] / m).abs()
        })
        .sum())
}

/// Argmax match rate, ties resolved to the lowest class index.
pub fn accuracy(probs: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let mut hits = 0usize;
    for (p, &y) in probs.iter().zip(labels) {
        if argmax(p) == class_index(y, p.len())? {
            hits += 1;
        }
    }
    Ok(hits as f64 / probs.len() as f64)
}

/// Full report for a list of predictions.
pub fn evaluate(predictions: &[PredictiveDistribution], y: &[f64], levels: usize, bins: usize) -> Result<MetricReport> {
    let nll = nll(predictions, y)?;
    match predictions.first() {
        Some(PredictiveDistribution::Mixture(_)) => Ok(MetricReport {
            nll,
            cal_error: Some(regression_calibration_error(&cdf_values(predictions, y)?, levels)?),
            ece: None,
            accuracy: None,
            n_eval: y.len(),
            bins: levels,
        }),
        _ => {
            let probs = predictions
                .iter()
                .map(|p| p.as_probs().map(<[f64]>::to_vec))
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport {
                nll,
                cal_error: None,
                ece: Some(ece(&probs, y, bins)?),
                accuracy: Some(accuracy(&probs, y)?),
                n_eval: y.len(),
                bins,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::GaussianMixture;

    fn gauss(mu: f64, sigma: f64) -> PredictiveDistribution {
        PredictiveDistribution::Mixture(GaussianMixture::new(vec![(mu, sigma)]).unwrap())
    }

    #[test]
    fn nll_cases() {
        let v = nll(&[gauss(0.0, 1.0)], &[0.0]).unwrap();
        assert!((v - 0.9189385332046727).abs() < 1e-12);
        let c = PredictiveDistribution::Categorical(vec![1.0, 0.0]);
        assert_eq!(nll(core::slice::from_ref(&c), &[0.0]).unwrap(), 0.0);
        let floored = nll(&[c], &[1.0]).unwrap();
        assert!((floored + libm::log(DENSITY_FLOOR)).abs() < 1e-9);
        assert!(nll(&[gauss(0.0, 1.0)], &[]).is_err());
        let far = nll(&[gauss(0.0, 1e-3)], &[1e6]).unwrap();
        assert!(far.is_finite());
    }

    #[test]
    fn calibration_closed_forms() {
        let m = 100;
        let perfect: Vec<f64> = (1..=m).map(|j| j as f64 / m as f64).collect();
        assert_eq!(regression_calibration_error(&perfect, m).unwrap(), 0.0);
        let zeros = vec![0.0; 37];
        let mf = m as f64;
        let closed = 100.0 * (mf - 1.0) * (2.0 * mf - 1.0) / (6.0 * mf * mf);
        let got = regression_calibration_error(&zeros, m).unwrap();
        assert!((got - closed).abs() < 1e-9);
        assert!((got - 32.835).abs() < 1e-9);
        assert!(regression_calibration_error(&[], m).is_err());
    }

    #[test]
    fn ece_and_accuracy_cases() {
        let sharp = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(ece(&sharp, &[0.0, 1.0], 15).unwrap(), 0.0);
        assert!((ece(&sharp, &[0.0, 0.0], 15).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(accuracy(&sharp, &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&sharp, &[1.0, 0.0]).unwrap(), 0.0);

        let soft: Vec<Vec<f64>> = (0..10).map(|_| vec![0.7, 0.3]).collect();
        let labels: Vec<f64> = (0..10).map(|i| if i < 7 { 0.0 } else { 1.0 }).collect();
        assert!(ece(&soft, &labels, 15).unwrap() < 1e-9);

        let uniform = vec![vec![0.1; 10]; 4];
        assert_eq!(accuracy(&uniform, &[0.0; 4]).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_picks_metrics_by_head() {
        let r = evaluate(&[gauss(0.0, 1.0), gauss(1.0, 1.0)], &[0.0, 1.0], 100, 15).unwrap();
        assert!(r.cal_error.is_some() && r.ece.is_none());
        assert_eq!(r.n_eval, 2);
        let c = PredictiveDistribution::Categorical(vec![0.2, 0.8]);
        let r = evaluate(&[c], &[1.0], 100, 15).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        assert!(r.cal_error.is_none());
    }
}
