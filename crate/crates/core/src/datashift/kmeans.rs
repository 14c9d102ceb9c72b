//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centers: Tensor,
    /// Sum of squared distances to assigned centers.
    pub objective: f64,
    /// Objective after every Lloyd iteration of the kept restart.
    pub history: Vec<f64>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(x: &Tensor, k: usize, rng: &mut impl Rng) -> Tensor {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(x.row_slice(i), x.row_slice(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(x.row_slice(i), x.row_slice(next)));
        }
    }
    x.select_rows(&chosen)
}

fn assign(x: &Tensor, centers: &Tensor, out: &mut [usize]) -> f64 {
    let mut obj = 0.0;
    for (i, slot) in out.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centers.rows() {
            let d = sq(x.row_slice(i), centers.row_slice(c));
            if d < best.0 {
                best = (d, c);
            }
        }
        *slot = best.1;
        obj += best.0;
    }
    obj
}

fn lloyd(x: &Tensor, mut centers: Tensor) -> KMeansFit {
    let (n, k, d) = (x.rows(), centers.rows(), x.cols());
    let mut assignments = vec![0; n];
    let mut objective = assign(x, &centers, &mut assignments);
    let mut history = vec![objective];
    for _ in 0..MAX_ITERS {
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (j, v) in x.row_slice(i).iter().enumerate() {
                sums.set(c, j, sums.get(c, j) + v);
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                for j in 0..d {
                    centers.set(c, j, sums.get(c, j) / count as f64);
                }
            }
        }
        let mut next = vec![0; n];
        let obj = assign(x, &centers, &mut next);
        history.push(obj);
        objective = obj;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansFit {
        assignments,
        centers,
        objective,
        history,
    }
}

/// Best of `restarts` k-means++ runs by objective, ties to the earliest.
pub fn kmeans(x: &Tensor, k: usize, restarts: usize, rng: &mut impl Rng) -> Result<KMeansFit> {
    if k == 0 || k > x.rows() {
        return Err(invalid!("k = {k} outside [1, {}]", x.rows()));
    }
    if restarts == 0 {
        return Err(invalid!("need at least one restart"));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts {
        let fit = lloyd(x, plus_plus(x, k, rng));
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
