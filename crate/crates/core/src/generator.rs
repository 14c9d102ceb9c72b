//! Set-conditioned pseudo-input generator.
//!
//! Every row of a mini-batch is encoded independently, each encoding is
//! replaced by the mean of its `K` nearest other encodings, optionally joined
//! with a `[mean, max]` pooling of the whole set, and decoded to a diagonal
//! Gaussian over a pseudo-input. Samples are drawn with the reparameterization
//! `mu + sigma * eps` so gradients reach the generator parameters.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Var};
use crate::error::{invalid, Result};
use crate::nets::{glorot, SIGMA_FLOOR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SubsetPolicy {
    /// `min(k, B / 2)`.
    Fixed { k: usize },
    /// Uniform on `1..=B / 2`, redrawn every mini-batch.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub feature_dim: usize,
    #[serde(default = "default_width")]
    pub enc_hidden: usize,
    #[serde(default = "default_width")]
    pub code_dim: usize,
    #[serde(default = "default_width")]
    pub dec_hidden: usize,
    #[serde(default = "default_policy")]
    pub subset: SubsetPolicy,
    #[serde(default = "default_true")]
    pub global_context: bool,
}

fn default_width() -> usize {
    50
}

fn default_policy() -> SubsetPolicy {
    SubsetPolicy::UniformRandom
}

fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            enc_hidden: default_width(),
            code_dim: default_width(),
            dec_hidden: default_width(),
            subset: default_policy(),
            global_context: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.feature_dim, self.enc_hidden, self.code_dim, self.dec_hidden].contains(&0) {
            return Err(invalid!("generator widths must be positive"));
        }
        if let SubsetPolicy::Fixed { k: 0 } = self.subset {
            return Err(invalid!("fixed subset size must be at least 1"));
        }
        Ok(())
    }

    fn decoder_input(&self) -> usize {
        if self.global_context {
            3 * self.code_dim
        } else {
            self.code_dim
        }
    }
}

/// Resolves the neighbor count for a batch of `batch` rows.
pub fn pick_subset_size(batch: usize, policy: SubsetPolicy, rng: &mut impl Rng) -> Result<usize> {
    if batch < 2 {
        return Err(invalid!("subset size needs a batch of at least 2, got {batch}"));
    }
    let max = batch / 2;
    Ok(match policy {
        SubsetPolicy::Fixed { k } => k.clamp(1, max),
        SubsetPolicy::UniformRandom => rng.random_range(1..=max),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` rows of `points` closest to `query`, nearest first, ties to the
/// lower index. `exclude` removes one row from consideration.
pub fn nearest_rows(points: &Tensor, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&m| Some(m) != exclude)
        .map(|m| (sq_dist(points.row_slice(m), query), m))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, m)| m).collect()
}

/// Indices of the `k` nearest neighbors of row `n` among the other rows of `points`.
pub fn knn_indices(points: &Tensor, n: usize, k: usize) -> Result<Vec<usize>> {
    let b = points.rows();
    if n >= b {
        return Err(invalid!("row {n} out of range for {b} points"));
    }
    if k == 0 || k > b / 2 {
        return Err(invalid!("K = {k} outside [1, {}]", b / 2));
    }
    Ok(nearest_rows(points, points.row_slice(n), k, Some(n)))
}

/// Draws a `rows x cols` matrix of independent standard normals.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Per-row diagonal Gaussians over a pseudo batch, as graph nodes.
#[derive(Debug, Clone)]
pub struct PseudoBatch {
    pub mu: Var,
    pub sigma: Var,
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

/// Detached values of a [`PseudoBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatchDistribution {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl PseudoBatch {
    pub fn values(&self, g: &Graph) -> PseudoBatchDistribution {
        PseudoBatchDistribution {
            mu: g.value(self.mu).clone(),
            sigma: g.value(self.sigma).clone(),
            k: self.k,
            neighbors: self.neighbors.clone(),
        }
    }
}

/// `mu + sigma * noise`, differentiable through `mu` and `sigma`.
pub fn sample_pseudo(g: &mut Graph, dist: &PseudoBatch, noise: &Tensor) -> Result<Var> {
    let s = g.shape(dist.mu);
    if noise.shape() != s {
        return Err(crate::Error::ShapeMismatch {
            op: "sample_pseudo",
            lhs: s,
            rhs: noise.shape(),
        });
    }
    let eps = g.constant(noise.clone());
    let spread = g.mul(dist.sigma, eps)?;
    g.add(dist.mu, spread)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
}

const PARAM_NAMES: [&str; 8] = [
    "enc.layer0.weight",
    "enc.layer0.bias",
    "enc.layer1.weight",
    "enc.layer1.bias",
    "dec.layer0.weight",
    "dec.layer0.bias",
    "dec.layer1.weight",
    "dec.layer1.bias",
];

impl Generator {
    pub fn new(config: GeneratorConfig, set_id: u32, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(set_id);
        for (i, (fan_in, fan_out)) in Self::dims(&config).into_iter().enumerate() {
            params.push(PARAM_NAMES[2 * i], glorot(fan_in, fan_out, rng));
            params.push(PARAM_NAMES[2 * i + 1], Tensor::zeros(1, fan_out));
        }
        Ok(Self { config, params })
    }

    pub fn from_tensors(
        config: GeneratorConfig,
        set_id: u32,
        named: &[(alloc::string::String, Tensor)],
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(set_id);
        for (i, (fan_in, fan_out)) in Self::dims(&config).into_iter().enumerate() {
            params.push(PARAM_NAMES[2 * i], Tensor::zeros(fan_in, fan_out));
            params.push(PARAM_NAMES[2 * i + 1], Tensor::zeros(1, fan_out));
        }
        params.load(named)?;
        Ok(Self { config, params })
    }

    fn dims(c: &GeneratorConfig) -> [(usize, usize); 4] {
        [
            (c.feature_dim, c.enc_hidden),
            (c.enc_hidden, c.code_dim),
            (c.decoder_input(), c.dec_hidden),
            (c.dec_hidden, 2 * c.feature_dim),
        ]
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> BoundGenerator {
        BoundGenerator {
            vars: self.params.bind(g),
            config: self.config.clone(),
        }
    }

    pub fn bind_detached(&self, g: &mut Graph) -> BoundGenerator {
        BoundGenerator {
            vars: self.params.bind_detached(g),
            config: self.config.clone(),
        }
    }

    /// Detached forward pass: the pseudo batch distribution for `x` with `k` neighbors.
    pub fn distribution(&self, x: &Tensor, k: usize) -> Result<PseudoBatchDistribution> {
        let mut g = Graph::new();
        let bound = self.bind_detached(&mut g);
        let xv = g.constant(x.clone());
        let pb = bound.forward(&mut g, xv, k)?;
        Ok(pb.values(&g))
    }
}

#[derive(Debug, Clone)]
pub struct BoundGenerator {
    vars: Vec<Var>,
    config: GeneratorConfig,
}

impl BoundGenerator {
    fn layer(&self, g: &mut Graph, x: Var, i: usize, relu: bool) -> Result<Var> {
        let h = g.matmul(x, self.vars[2 * i])?;
        let h = g.add(h, self.vars[2 * i + 1])?;
        Ok(if relu { g.relu(h) } else { h })
    }

    /// Row-wise encoder `B x d -> B x code_dim`.
    pub fn encode_set(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.rows < 2 {
            return Err(invalid!("set encoder needs at least 2 rows, got {}", s.rows));
        }
        if s.cols != self.config.feature_dim {
            return Err(invalid!(
                "generator expects {} features, got {}",
                self.config.feature_dim,
                s.cols
            ));
        }
        let h = self.layer(g, x, 0, true)?;
        self.layer(g, h, 1, false)
    }

    /// KNN-mean aggregation in encoding space (plus optional global pooling)
    /// followed by the Gaussian decoder.
    pub fn aggregate_decode(&self, g: &mut Graph, z: Var, k: usize) -> Result<PseudoBatch> {
        let codes = g.value(z).clone();
        let neighbors = (0..codes.rows())
            .map(|n| knn_indices(&codes, n, k))
            .collect::<Result<Vec<_>>>()?;
        let agg = g.neighbor_mean(z, neighbors.clone())?;
        let input = if self.config.global_context {
            let rows = codes.rows();
            let mean = g.mean_rows(z);
            let max = g.max_rows(z);
            let mean = g.broadcast_rows(mean, rows)?;
            let max = g.broadcast_rows(max, rows)?;
            g.concat_cols(&[agg, mean, max])?
        } else {
            agg
        };
        let h = self.layer(g, input, 2, true)?;
        let out = self.layer(g, h, 3, false)?;
        let d = self.config.feature_dim;
        let mu = g.slice_cols(out, 0, d)?;
        let raw = g.slice_cols(out, d, d)?;
        let s = g.softplus(raw);
        let sigma = g.add_scalar(s, SIGMA_FLOOR);
        Ok(PseudoBatch {
            mu,
            sigma,
            k,
            neighbors,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, k: usize) -> Result<PseudoBatch> {
        let z = self.encode_set(g, x)?;
        self.aggregate_decode(g, z, k)
    }
}

impl core::fmt::Display for SubsetPolicy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SubsetPolicy::Fixed { k } => f.write_str(&format!("fixed({k})")),
            SubsetPolicy::UniformRandom => f.write_str("uniform_random"),
        }
    }
}
