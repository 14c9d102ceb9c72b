//! Synthetic datasets.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Standard deviation of the input noise of the gapped sine.
pub const GAP_SINE_NOISE: f64 = 0.03;
/// Interval without training inputs.
pub const GAP: (f64, f64) = (0.4, 0.8);

/// `u + sin(4u) + sin(13u)` with `u = x + eps`.
pub fn gap_sine_target(x: f64, eps: f64) -> f64 {
    let u = x + eps;
    u + libm::sin(4.0 * u) + libm::sin(13.0 * u)
}

/// Gapped sine: `n_left` inputs uniform on `[0, 0.4]` and `n_right` on `[0.8, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSine {
    pub n_left: usize,
    pub n_right: usize,
    pub noise_std: f64,
}

impl Default for GapSine {
    fn default() -> Self {
        Self {
            n_left: 100,
            n_right: 100,
            noise_std: GAP_SINE_NOISE,
        }
    }
}

impl GapSine {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        if !(self.noise_std >= 0.0) {
            return Err(invalid!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        let mut rng = stream(seed, Stream::Data);
        let mut xs = Vec::with_capacity(self.n_left + self.n_right);
        xs.extend((0..self.n_left).map(|_| rng.random_range(0.0..=GAP.0)));
        xs.extend((0..self.n_right).map(|_| rng.random_range(GAP.1..=1.0)));
        let ys = xs
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                gap_sine_target(x, self.noise_std * z)
            })
            .collect();
        Dataset::new(Tensor::column(&xs), ys, Some(alloc::vec!["x".into()]))
    }
}

pub fn gen_gap_sine(n_left: usize, n_right: usize, seed: u64) -> Result<Dataset> {
    GapSine {
        n_left,
        n_right,
        ..GapSine::default()
    }
    .generate(seed)
}

/// `n_per` isotropic Gaussian points around each center, labeled by center index.
pub fn gen_blobs(centers: &[Vec<f64>], sigma: f64, n_per: usize, seed: u64) -> Result<Dataset> {
    if n_per == 0 || centers.is_empty() {
        return Err(invalid!("blobs need at least one center and one point per center"));
    }
    if !(sigma >= 0.0) {
        return Err(invalid!("sigma must be nonnegative, got {sigma}"));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(invalid!("centers must share a positive dimension"));
    }
    let mut rng = stream(seed, Stream::Data);
    let mut data = Vec::with_capacity(centers.len() * n_per * d);
    let mut labels = Vec::with_capacity(centers.len() * n_per);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per {
            for &m in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + sigma * z);
            }
            labels.push(c as f64);
        }
    }
    Dataset::new(Tensor::from_vec(labels.len(), d, data)?, labels, None)
}

/// Regression data on two separated segments of one planar curve.
///
/// Segment `m` has `x0 = a_m + 1.5 t` for `t ~ U(0, 1)` with `a_0 = -2`,
/// `a_1 = 0.5`, and `x1 = 0.5 sin(2 x0)`, both with N(0, 0.05^2) jitter. The
/// target is `0.5 x0 + sin(2 x0) + 0.5 x1` plus N(0, 0.1^2) noise. Returns the
/// segment index of every row.
pub fn gen_two_manifold(n_per: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n_per == 0 {
        return Err(invalid!("need at least one point per segment"));
    }
    let mut rng = stream(seed, Stream::Data);
    let jitter = Normal::new(0.0, 0.05).expect("valid");
    let noise = Normal::new(0.0, 0.1).expect("valid");
    let mut data = Vec::with_capacity(4 * n_per);
    let mut ys = Vec::with_capacity(2 * n_per);
    let mut groups = Vec::with_capacity(2 * n_per);
    for (m, start) in [-2.0, 0.5].into_iter().enumerate() {
        for _ in 0..n_per {
            let t: f64 = rng.random();
            let x0 = start + 1.5 * t + jitter.sample(&mut rng);
            let x1 = 0.5 * libm::sin(2.0 * x0) + jitter.sample(&mut rng);
            data.extend([x0, x1]);
            ys.push(0.5 * x0 + libm::sin(2.0 * x0) + 0.5 * x1 + noise.sample(&mut rng));
            groups.push(m);
        }
    }
    let ds = Dataset::new(Tensor::from_vec(2 * n_per, 2, data)?, ys, None)?;
    Ok((ds, groups))
}
