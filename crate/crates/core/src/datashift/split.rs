//! Train/test splits that hold out whole clusters.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub k: usize,
    pub assignments: Vec<usize>,
    pub test_clusters: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SplitSpec {
    /// Checks that train and test partition all points by cluster and that
    /// the test side holds at least `min_test_frac` of them.
    pub fn validate(&self, min_test_frac: f64) -> Result<()> {
        let n = self.assignments.len();
        let mut seen = alloc::vec![0u8; n];
        for &i in self.train_idx.iter().chain(&self.test_idx) {
            if i >= n {
                return Err(invalid!("index {i} out of range for {n} points"));
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(invalid!("point {i} appears {} times across train and test", seen[i]));
        }
        for &i in &self.test_idx {
            if !self.test_clusters.contains(&self.assignments[i]) {
                return Err(invalid!("test point {i} is outside the test clusters"));
            }
        }
        for &i in &self.train_idx {
            if self.test_clusters.contains(&self.assignments[i]) {
                return Err(invalid!("train point {i} belongs to a test cluster"));
            }
        }
        if (self.test_idx.len() as f64) < min_test_frac * n as f64 {
            return Err(invalid!(
                "test set holds {} of {n} points, below {min_test_frac}",
                self.test_idx.len()
            ));
        }
        Ok(())
    }
}

/// Shuffles the distinct clusters and moves them to the test side, in that
/// order, until it holds at least `min_test_frac` of all points.
pub fn make_ood_split(assignments: &[usize], k: usize, min_test_frac: f64, seed: u64) -> Result<SplitSpec> {
    if !(min_test_frac > 0.0 && min_test_frac < 1.0) {
        return Err(invalid!("min_test_frac must lie in (0, 1), got {min_test_frac}"));
    }
    let mut clusters: Vec<usize> = assignments.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(invalid!(
            "a shifted split needs at least 2 clusters, got {}",
            clusters.len()
        ));
    }
    clusters.shuffle(&mut stream(seed, Stream::Split));
    let n = assignments.len();
    let mut test_clusters = Vec::new();
    let mut count = 0usize;
    for &c in &clusters {
        if count as f64 >= min_test_frac * n as f64 {
            break;
        }
        test_clusters.push(c);
        count += assignments.iter().filter(|&&a| a == c).count();
    }
    if count == n {
        return Err(invalid!("no points left for training"));
    }
    test_clusters.sort_unstable();
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| test_clusters.contains(&assignments[i]));
    let spec = SplitSpec {
        seed,
        k,
        assignments: assignments.to_vec(),
        test_clusters,
        train_idx,
        test_idx,
    };
    spec.validate(min_test_frac)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn two_equal_clusters() {
        let a: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let s = make_ood_split(&a, 2, 0.2, 3).unwrap();
        assert_eq!(s.test_clusters.len(), 1);
        assert_eq!(s.test_idx.len(), 50);
    }

    #[test]
    fn ten_equal_clusters_take_two() {
        let a: Vec<usize> = (0..100).map(|i| i % 10).collect();
        for seed in 0..10 {
            let s = make_ood_split(&a, 10, 0.2, seed).unwrap();
            assert_eq!(s.test_clusters.len(), 2);
            assert_eq!(s.test_idx.len(), 20);
        }
    }

    #[test]
    fn single_cluster_is_rejected() {
        assert!(make_ood_split(&[0, 0, 0], 1, 0.2, 0).is_err());
        assert!(make_ood_split(&[0, 1], 2, 0.0, 0).is_err());
    }

    #[test]
    fn validate_catches_overlap() {
        let mut s = make_ood_split(&[0, 0, 1, 1], 2, 0.2, 0).unwrap();
        s.train_idx.push(s.test_idx[0]);
        assert!(s.validate(0.2).is_err());
        let bad = SplitSpec {
            seed: 0,
            k: 2,
            assignments: vec![0, 1],
            test_clusters: vec![1],
            train_idx: vec![1],
            test_idx: vec![0],
        };
        assert!(bad.validate(0.2).is_err());
    }
}
