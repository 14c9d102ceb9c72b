//! Normalized spectral clustering.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::eigen::symmetric_eigen;
use super::kmeans::kmeans;
use crate::autodiff::sq_dist_matrix;
use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Above this many points, a seeded subsample is clustered and the rest are
/// assigned to the cluster of their nearest subsampled point.
pub const SUBSAMPLE_LIMIT: usize = 2000;
const RESTARTS: usize = 20;

/// Median of the `N(N-1)/2` pairwise Euclidean distances (mean of the two
/// middle values for an even count).
pub fn median_pairwise_distance(x: &Tensor) -> f64 {
    let d2 = sq_dist_matrix(x, x);
    let n = x.rows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(libm::sqrt(d2.get(i, j)));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Relabels clusters by order of first appearance.
fn canonical_labels(a: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    a.iter()
        .map(|&c| match map.iter().find(|(from, _)| *from == c) {
            Some(&(_, to)) => to,
            None => {
                map.push((c, map.len()));
                map.len() - 1
            }
        })
        .collect()
}

fn cluster_dense(x: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let d2 = sq_dist_matrix(x, x);
    let mut gamma = median_pairwise_distance(x);
    if gamma == 0.0 {
        gamma = libm::sqrt(d2.data().iter().copied().fold(0.0, f64::max));
    }
    if gamma == 0.0 {
        return Ok(vec![0; n]);
    }
    let w = Tensor::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            libm::exp(-d2.get(i, j) / (2.0 * gamma * gamma))
        }
    });
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row_slice(i).iter().sum();
            if d > 0.0 {
                1.0 / libm::sqrt(d)
            } else {
                0.0
            }
        })
        .collect();
    let lap = Tensor::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt_deg[i] * w.get(i, j) * inv_sqrt_deg[j]
    });
    let eig = symmetric_eigen(&lap)?;
    let embed = Tensor::from_fn(n, k, |i, j| eig.vectors.get(i, j));
    let rows = Tensor::from_fn(n, k, |i, j| {
        let norm = libm::sqrt(embed.row_slice(i).iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            embed.get(i, j) / norm
        } else {
            0.0
        }
    });
    let fit = kmeans(&rows, k, RESTARTS, &mut stream(seed, Stream::Cluster))?;
    Ok(fit.assignments)
}

/// Partition of the rows of `x` into `k` clusters, labels canonicalized by
/// first appearance.
pub fn spectral_clusters(x: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    spectral_clusters_with_limit(x, k, seed, SUBSAMPLE_LIMIT)
}

/// As [`spectral_clusters`], clustering a seeded subsample of `limit` rows
/// when there are more and labeling the rest by nearest sampled neighbor.
pub fn spectral_clusters_with_limit(x: &Tensor, k: usize, seed: u64, limit: usize) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(invalid!("k = {k} outside [1, {n}]"));
    }
    if k > limit {
        return Err(invalid!("k = {k} exceeds subsample size {limit}"));
    }
    if n <= limit {
        return Ok(canonical_labels(&cluster_dense(x, k, seed)?));
    }
    let mut idx = sample(&mut stream(seed, Stream::Split), n, limit).into_vec();
    idx.sort_unstable();
    let sub = x.select_rows(&idx);
    let sub_labels = cluster_dense(&sub, k, seed)?;
    let d2 = sq_dist_matrix(x, &sub);
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for (s, &d) in d2.row_slice(i).iter().enumerate() {
                if d < best.0 {
                    best = (d, s);
                }
            }
            sub_labels[best.1]
        })
        .collect();
    Ok(canonical_labels(&labels))
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings. Two single-cluster labelings score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid!("labelings of length {} and {}", a.len(), b.len()));
    }
    let (a, b) = (canonical_labels(a), canonical_labels(b));
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    for (&i, &j) in a.iter().zip(&b) {
        table[i * kb + j] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = (0..ka).map(|i| choose2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = choose2(a.len());
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[2, 2, 2]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v < 0.0);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn median_distance_on_a_line() {
        let x = Tensor::column(&[0.0, 1.0, 3.0]);
        // distances 1, 2, 3
        assert_eq!(median_pairwise_distance(&x), 2.0);
    }

    #[test]
    fn one_cluster_and_twins() {
        let x = Tensor::from_rows(&[&[0.0], &[0.1], &[5.0], &[5.0], &[5.2], &[0.05]]).unwrap();
        assert_eq!(spectral_clusters(&x, 1, 0).unwrap(), vec![0; 6]);
        let a = spectral_clusters(&x, 2, 0).unwrap();
        assert_eq!(a[2], a[3]);
        assert_eq!(a, vec![0, 0, 1, 1, 1, 0]);
        assert!(spectral_clusters(&x, 7, 0).is_err());
    }
}
