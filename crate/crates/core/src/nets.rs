//! Predictor networks and Monte Carlo predictive inference.
//!
//! An [`Mlp`] ends in one of two heads:
//!
//! - Gaussian: two outputs `(mu, raw)` per row, `sigma = softplus(raw) + 1e-6`.
//! - Categorical with `C` classes: `C + 1` logits, the last one being the log
//!   temperature. Training likelihoods use the first `C` logits untempered;
//!   predictive probabilities are `softmax(z / t)`.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, ParamSet, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Floor added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    Gaussian,
    Categorical { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    pub head: Head,
}

fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_dropout() -> f64 {
    0.1
}

impl MlpConfig {
    /// Two hidden layers of 50 ReLU units with dropout 0.1.
    pub fn standard(input_dim: usize, head: Head) -> Self {
        Self {
            input_dim,
            hidden: default_hidden(),
            activation: default_activation(),
            dropout_p: default_dropout(),
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid!("input_dim must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid!("hidden layers must be non-empty with positive widths"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if let Head::Categorical { classes } = self.head {
            if classes < 2 {
                return Err(invalid!("categorical head needs at least 2 classes"));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Gaussian => 2,
            Head::Categorical { classes } => classes + 1,
        }
    }

    /// Number of linear layers (hidden layers plus the output layer).
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth());
        let mut fan_in = self.input_dim;
        for &w in &self.hidden {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.output_dim()));
        dims
    }
}

/// Glorot-uniform weight matrix of shape `fan_in x fan_out`.
pub(crate) fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

/// Multilayer perceptron with a probabilistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: ParamSet,
}

/// Parameters of an [`Mlp`] placed in one [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
    activation: Activation,
    hidden: usize,
}

impl Mlp {
    pub fn new(config: MlpConfig, set_id: u32, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(set_id);
        for (l, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            params.push(format!("layer{l}.weight"), glorot(fan_in, fan_out, rng));
            params.push(format!("layer{l}.bias"), Tensor::zeros(1, fan_out));
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a model from saved tensors, checking names and shapes.
    pub fn from_tensors(config: MlpConfig, set_id: u32, named: &[(String, Tensor)]) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(set_id);
        for (l, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            params.push(format!("layer{l}.weight"), Tensor::zeros(fan_in, fan_out));
            params.push(format!("layer{l}.bias"), Tensor::zeros(1, fan_out));
        }
        params.load(named)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.bound(self.params.bind(g))
    }

    /// Binds parameters as constants, so no gradient reaches them.
    pub fn bind_detached(&self, g: &mut Graph) -> BoundMlp {
        self.bound(self.params.bind_detached(g))
    }

    fn bound(&self, vars: Vec<Var>) -> BoundMlp {
        let (weights, biases) = vars.chunks(2).map(|c| (c[0], c[1])).unzip();
        BoundMlp {
            weights,
            biases,
            activation: self.config.activation,
            hidden: self.config.hidden.len(),
        }
    }

    /// Samples one dropout mask per hidden layer for a batch of `rows`, scaled
    /// by `1 / (1 - p)`. Returns `None` (and draws nothing) when `p == 0`.
    pub fn sample_masks(&self, rows: usize, rng: &mut impl Rng) -> Option<Vec<Tensor>> {
        let p = self.config.dropout_p;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some(
            self.config
                .hidden
                .iter()
                .map(|&w| Tensor::from_fn(rows, w, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep }))
                .collect(),
        )
    }

    /// Raw head outputs for `x`, outside of any training graph.
    pub fn forward_values(&self, x: &Tensor, masks: Option<&[Tensor]>) -> Result<Tensor> {
        let mut g = Graph::new();
        let net = self.bind_detached(&mut g);
        let xv = g.constant(x.clone());
        let out = net.forward(&mut g, xv, masks)?;
        Ok(g.value(out).clone())
    }

    /// Hidden activations after layer `layer` (0-based), without dropout.
    pub fn features(&self, x: &Tensor, layer: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let net = self.bind_detached(&mut g);
        let xv = g.constant(x.clone());
        let h = net.forward_span(&mut g, xv, 0, layer + 1, None)?;
        Ok(g.value(h).clone())
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var, masks: Option<&[Tensor]>) -> Result<Var> {
        self.forward_span(g, x, 0, self.weights.len(), masks)
    }

    /// Applies linear layers `from..to`. Hidden layers are followed by the
    /// activation and, when `masks` is given, dropout with `masks[layer]`.
    pub fn forward_span(&self, g: &mut Graph, x: Var, from: usize, to: usize, masks: Option<&[Tensor]>) -> Result<Var> {
        if from > to || to > self.weights.len() {
            return Err(invalid!("layer span {from}..{to} out of range"));
        }
        if let Some(m) = masks {
            if m.len() != self.hidden {
                return Err(invalid!("expected {} dropout masks, got {}", self.hidden, m.len()));
            }
        }
        let mut h = x;
        for l in from..to {
            h = g.matmul(h, self.weights[l])?;
            h = g.add(h, self.biases[l])?;
            if l < self.hidden {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::LeakyRelu => g.leaky_relu(h, LEAKY_RELU_SLOPE),
                };
                if let Some(m) = masks {
                    h = g.dropout(h, &m[l])?;
                }
            }
        }
        Ok(h)
    }
}

/// Splits Gaussian head outputs into `(mu, sigma)` column vectors.
pub fn gaussian_head(g: &mut Graph, raw: Var) -> Result<(Var, Var)> {
    let mu = g.slice_cols(raw, 0, 1)?;
    let s = g.slice_cols(raw, 1, 1)?;
    let s = g.softplus(s);
    let sigma = g.add_scalar(s, SIGMA_FLOOR);
    Ok((mu, sigma))
}

/// Splits categorical head outputs into `(class logits, log temperature)`.
pub fn categorical_head(g: &mut Graph, raw: Var, classes: usize) -> Result<(Var, Var)> {
    let logits = g.slice_cols(raw, 0, classes)?;
    let log_t = g.slice_cols(raw, classes, 1)?;
    Ok((logits, log_t))
}

pub fn gaussian_sigma(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

/// Standard normal CDF, `0.5 * erfc(-z / sqrt 2)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * core::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_log_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - libm::log(sigma) - 0.5 * libm::log(2.0 * core::f64::consts::PI)
}

/// `(softmax(z[..C] / t), t)` with `t = exp(z[C])`.
pub fn temperature_scale(logits: &[f64]) -> (Vec<f64>, f64) {
    let (classes, last) = logits.split_at(logits.len() - 1);
    let t = libm::exp(last[0]);
    (softmax(classes.iter().map(|z| z / t)), t)
}

pub fn softmax(z: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let m = z.clone().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Equal-weight mixture of Gaussians `(mu, sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<(f64, f64)>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid!("mixture needs at least one component"));
        }
        if let Some(&(_, s)) = components.iter().find(|(_, s)| !(*s > 0.0)) {
            return Err(invalid!("mixture sigma must be positive, got {s}"));
        }
        Ok(Self { components })
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.0).sum::<f64>() / self.components.len() as f64
    }

    /// Law of total variance: mean of variances plus variance of means.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.components.len() as f64;
        self.components
            .iter()
            .map(|&(mu, s)| s * s + (mu - m) * (mu - m))
            .sum::<f64>()
            / n
    }

    pub fn std(&self) -> f64 {
        libm::sqrt(self.variance())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let n = self.components.len() as f64;
        self.components
            .iter()
            .map(|&(mu, s)| normal_cdf((y - mu) / s))
            .sum::<f64>()
            / n
    }

    /// `ln((1/S) sum_s N(y; mu_s, sigma_s))` via log-sum-exp.
    pub fn log_density(&self, y: f64) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|&(mu, s)| normal_log_pdf(y, mu, s))
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| libm::exp(l - m)).sum();
        m + libm::log(s) - libm::log(logs.len() as f64)
    }

    /// Maps components through `y -> shift + scale * y`.
    pub fn affine(&self, shift: f64, scale: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|&(mu, s)| (shift + scale * mu, libm::fabs(scale) * s))
                .collect(),
        }
    }
}

/// Predictive distribution for a single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveDistribution {
    Mixture(GaussianMixture),
    Categorical(Vec<f64>),
}

impl PredictiveDistribution {
    pub fn as_mixture(&self) -> Result<&GaussianMixture> {
        match self {
            Self::Mixture(m) => Ok(m),
            Self::Categorical(_) => Err(invalid!("expected a regression mixture")),
        }
    }

    pub fn as_probs(&self) -> Result<&[f64]> {
        match self {
            Self::Categorical(p) => Ok(p),
            Self::Mixture(_) => Err(invalid!("expected categorical probabilities")),
        }
    }
}

/// `(1/S) sum_s Phi((y - mu_s) / sigma_s)`.
pub fn mixture_cdf(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    Ok(dist.as_mixture()?.cdf(y))
}

/// Per-row predictive pieces from one forward pass.
enum PassOutput {
    Gaussian(Vec<(f64, f64)>),
    Probs(Vec<Vec<f64>>),
}

fn decode_pass(config: &MlpConfig, raw: &Tensor, tempered: bool) -> PassOutput {
    match config.head {
        Head::Gaussian => PassOutput::Gaussian(
            (0..raw.rows())
                .map(|i| (raw.get(i, 0), gaussian_sigma(raw.get(i, 1))))
                .collect(),
        ),
        Head::Categorical { classes } => PassOutput::Probs(
            (0..raw.rows())
                .map(|i| {
                    let row = raw.row_slice(i);
                    if tempered {
                        temperature_scale(row).0
                    } else {
                        softmax(row[..classes].iter().copied())
                    }
                })
                .collect(),
        ),
    }
}

fn combine(passes: Vec<PassOutput>, rows: usize) -> Result<Vec<PredictiveDistribution>> {
    let s = passes.len() as f64;
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        match &passes[0] {
            PassOutput::Gaussian(_) => {
                let comps = passes
                    .iter()
                    .map(|p| match p {
                        PassOutput::Gaussian(v) => Ok(v[i]),
                        PassOutput::Probs(_) => Err(invalid!("heterogeneous heads")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(PredictiveDistribution::Mixture(GaussianMixture::new(comps)?));
            }
            PassOutput::Probs(first) => {
                let mut mean = vec![0.0; first[i].len()];
                for p in &passes {
                    let PassOutput::Probs(v) = p else {
                        return Err(invalid!("heterogeneous heads"));
                    };
                    for (m, q) in mean.iter_mut().zip(&v[i]) {
                        *m += q;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= s);
                out.push(PredictiveDistribution::Categorical(mean));
            }
        }
    }
    Ok(out)
}

/// `S` stochastic passes with independent dropout masks: an `S`-component
/// mixture per row (regression) or the mean of `S` probability vectors.
pub fn mc_dropout_predict(
    model: &Mlp,
    x: &Tensor,
    samples: usize,
    tempered: bool,
    rng: &mut impl Rng,
) -> Result<Vec<PredictiveDistribution>> {
    if samples == 0 {
        return Err(invalid!("sample count must be at least 1"));
    }
    if x.cols() != model.config.input_dim {
        return Err(Error::ShapeMismatch {
            op: "mc_dropout_predict",
            lhs: x.shape(),
            rhs: crate::Shape::new(x.rows(), model.config.input_dim),
        });
    }
    let mut passes = Vec::with_capacity(samples);
    for _ in 0..samples {
        let masks = model.sample_masks(x.rows(), rng);
        let raw = model.forward_values(x, masks.as_deref())?;
        passes.push(decode_pass(&model.config, &raw, tempered));
    }
    combine(passes, x.rows())
}

/// One deterministic pass per member: an `M`-component mixture per row
/// (regression) or the mean probability vector.
pub fn ensemble_predict(models: &[Mlp], x: &Tensor, tempered: bool) -> Result<Vec<PredictiveDistribution>> {
    let first = models
        .first()
        .ok_or_else(|| invalid!("ensemble needs at least one model"))?;
    if models.iter().any(|m| m.config.head != first.config.head) {
        return Err(invalid!("ensemble members have heterogeneous heads"));
    }
    let passes = models
        .iter()
        .map(|m| Ok(decode_pass(&m.config, &m.forward_values(x, None)?, tempered)))
        .collect::<Result<Vec<_>>>()?;
    combine(passes, x.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn tiny(head: Head, dropout_p: f64) -> MlpConfig {
        MlpConfig {
            input_dim: 1,
            hidden: vec![1],
            activation: Activation::Relu,
            dropout_p,
            head,
        }
    }

    fn zero_model(config: MlpConfig) -> Mlp {
        let mut m = Mlp::new(config, 0, &mut stream(0, Stream::Init)).unwrap();
        for t in m.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    #[test]
    fn zero_network_gaussian_head_predicts_ln2_sigma() {
        let m = zero_model(MlpConfig::standard(3, Head::Gaussian));
        let x = Tensor::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 5.0);
        let raw = m.forward_values(&x, None).unwrap();
        for i in 0..4 {
            assert_eq!(raw.get(i, 0), 0.0);
            let s = gaussian_sigma(raw.get(i, 1));
            assert!((s - (core::f64::consts::LN_2 + 1e-6)).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clamps_negative_input() {
        let mut m = zero_model(tiny(Head::Gaussian, 0.0));
        m.params_mut().tensors_mut()[0].set(0, 0, 1.0);
        let h = m.features(&Tensor::scalar(-5.0), 0).unwrap();
        assert_eq!(h.item().unwrap(), 0.0);
    }

    #[test]
    fn standard_architecture_output_shape() {
        let cfg = MlpConfig::standard(13, Head::Gaussian);
        let m = Mlp::new(cfg, 0, &mut stream(1, Stream::Init)).unwrap();
        let out = m.forward_values(&Tensor::zeros(7, 13), None).unwrap();
        assert_eq!(out.shape(), crate::Shape::new(7, 2));
        assert_eq!(m.params().len(), 6);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = MlpConfig::standard(2, Head::Gaussian);
        cfg.hidden.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = MlpConfig::standard(2, Head::Gaussian);
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = MlpConfig::standard(2, Head::Categorical { classes: 1 });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn temperature_scale_cases() {
        let (p, t) = temperature_scale(&[1.0, 2.0, 0.0]);
        assert_eq!(t, 1.0);
        let expect = softmax([1.0, 2.0].into_iter());
        assert!((p[0] - expect[0]).abs() < 1e-15 && (p[1] - expect[1]).abs() < 1e-15);

        let (p, t) = temperature_scale(&[2.0, 0.0, libm::log(2.0)]);
        assert!((t - 2.0).abs() < 1e-15);
        assert!((p[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-12);

        let (p, _) = temperature_scale(&[5.0, -3.0, 1.0, 40.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixture_cdf_cases() {
        let single = PredictiveDistribution::Mixture(GaussianMixture::new(vec![(0.0, 1.0)]).unwrap());
        assert_eq!(mixture_cdf(&single, 0.0).unwrap(), 0.5);
        assert_eq!(mixture_cdf(&single, 1e6).unwrap(), 1.0);
        assert_eq!(mixture_cdf(&single, -1e6).unwrap(), 0.0);
        let two = PredictiveDistribution::Mixture(GaussianMixture::new(vec![(-1.0, 1.0), (1.0, 1.0)]).unwrap());
        assert!((mixture_cdf(&two, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(mixture_cdf(&PredictiveDistribution::Categorical(vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        // Phi(1), Phi(-2), Phi(3.5) to 16 digits
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((normal_cdf(-2.0) - 0.022750131948179195).abs() < 1e-12);
        assert!((normal_cdf(3.5) - 0.9997673709209645).abs() < 1e-12);
    }

    #[test]
    fn mixture_moments() {
        let m = GaussianMixture::new(vec![(0.0, 1.0), (2.0, 1.0)]).unwrap();
        assert_eq!(m.mean(), 1.0);
        assert_eq!(m.variance(), 2.0);
        assert!(GaussianMixture::new(vec![]).is_err());
        assert!(GaussianMixture::new(vec![(0.0, 0.0)]).is_err());
    }

    #[test]
    fn no_dropout_gives_identical_components() {
        let m = Mlp::new(tiny(Head::Gaussian, 0.0), 0, &mut stream(3, Stream::Init)).unwrap();
        let x = Tensor::column(&[0.3, -1.0]);
        let p = mc_dropout_predict(&m, &x, 7, true, &mut stream(3, Stream::Eval)).unwrap();
        for d in &p {
            let c = &d.as_mixture().unwrap().components;
            assert_eq!(c.len(), 7);
            assert!(c.iter().all(|v| v == &c[0]));
        }
        let again = mc_dropout_predict(&m, &x, 7, true, &mut stream(99, Stream::Eval)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn single_sample_matches_one_stochastic_pass() {
        let m = Mlp::new(MlpConfig::standard(2, Head::Gaussian), 0, &mut stream(4, Stream::Init)).unwrap();
        let x = Tensor::from_fn(3, 2, |i, j| (i + j) as f64 * 0.3);
        let p = mc_dropout_predict(&m, &x, 1, true, &mut stream(5, Stream::Eval)).unwrap();
        let mut rng = stream(5, Stream::Eval);
        let masks = m.sample_masks(3, &mut rng);
        let raw = m.forward_values(&x, masks.as_deref()).unwrap();
        for (i, d) in p.iter().enumerate() {
            let c = d.as_mixture().unwrap().components[0];
            assert_eq!(c, (raw.get(i, 0), gaussian_sigma(raw.get(i, 1))));
        }
        assert!(mc_dropout_predict(&m, &x, 0, true, &mut rng).is_err());
    }

    #[test]
    fn mc_dropout_mean_matches_two_state_enumeration() {
        // 1 -> 1 -> (2 classes + temperature), p = 0.5: the hidden unit is either
        // doubled or dropped, so the predictive mean is the average of two softmaxes.
        let mut m = zero_model(tiny(Head::Categorical { classes: 2 }, 0.5));
        let t = m.params_mut().tensors_mut();
        t[0].set(0, 0, 1.0);
        t[2] = Tensor::from_rows(&[&[1.5, -0.5, 0.0]]).unwrap();
        t[3] = Tensor::from_rows(&[&[0.1, 0.2, 0.0]]).unwrap();
        let x = Tensor::scalar(0.8);
        let h_keep = 0.8 * 2.0;
        let keep = softmax([0.1 + 1.5 * h_keep, 0.2 - 0.5 * h_keep].into_iter());
        let drop = softmax([0.1, 0.2].into_iter());
        let expect = [(keep[0] + drop[0]) / 2.0, (keep[1] + drop[1]) / 2.0];
        let var = (keep[0] - drop[0]).powi(2) / 4.0;

        let s = 10_000;
        let p = mc_dropout_predict(&m, &x, s, true, &mut stream(11, Stream::Eval)).unwrap();
        let probs = p[0].as_probs().unwrap();
        let se = libm::sqrt(var / s as f64);
        assert!((probs[0] - expect[0]).abs() < 3.0 * se, "{probs:?} vs {expect:?}");
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_cases() {
        let cfg = MlpConfig::standard(2, Head::Gaussian);
        let a = Mlp::new(cfg.clone(), 0, &mut stream(1, Stream::Init)).unwrap();
        let b = Mlp::new(cfg, 0, &mut stream(2, Stream::Init)).unwrap();
        let x = Tensor::from_fn(4, 2, |i, j| i as f64 - j as f64);

        let single = ensemble_predict(core::slice::from_ref(&a), &x, true).unwrap();
        let raw = a.forward_values(&x, None).unwrap();
        for (i, d) in single.iter().enumerate() {
            let c = d.as_mixture().unwrap();
            assert_eq!(c.components, vec![(raw.get(i, 0), gaussian_sigma(raw.get(i, 1)))]);
        }

        let same = ensemble_predict(&[a.clone(), a.clone(), a.clone()], &x, true).unwrap();
        for (s, d) in single.iter().zip(&same) {
            let (s, d) = (s.as_mixture().unwrap(), d.as_mixture().unwrap());
            assert_eq!(s.mean(), d.mean());
            assert!((s.variance() - d.variance()).abs() < 1e-15);
        }

        assert_eq!(
            ensemble_predict(&[a.clone(), b], &x, true).unwrap()[0]
                .as_mixture()
                .unwrap()
                .components
                .len(),
            2
        );
        let c = Mlp::new(
            MlpConfig::standard(2, Head::Categorical { classes: 3 }),
            0,
            &mut stream(1, Stream::Init),
        )
        .unwrap();
        assert!(ensemble_predict(&[a, c], &x, true).is_err());
        assert!(ensemble_predict(&[], &x, true).is_err());
    }

    #[test]
    fn training_logits_ignore_temperature_output() {
        let cfg = MlpConfig::standard(3, Head::Categorical { classes: 4 });
        let mut m = Mlp::new(cfg, 0, &mut stream(8, Stream::Init)).unwrap();
        let x = Tensor::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.4);
        let logits = |m: &Mlp| {
            let mut g = Graph::new();
            let net = m.bind(&mut g);
            let xv = g.constant(x.clone());
            let raw = net.forward(&mut g, xv, None).unwrap();
            let (l, _) = categorical_head(&mut g, raw, 4).unwrap();
            g.value(l).clone()
        };
        let before = logits(&m);
        let w = &mut m.params_mut().tensors_mut()[4];
        for i in 0..w.rows() {
            w.set(i, 4, w.get(i, 4) + 3.0);
        }
        assert_eq!(before, logits(&m));
    }

    #[test]
    fn checkpoint_roundtrip_through_named_tensors() {
        let cfg = MlpConfig::standard(2, Head::Gaussian);
        let m = Mlp::new(cfg.clone(), 0, &mut stream(1, Stream::Init)).unwrap();
        let named: Vec<_> = m
            .params()
            .names()
            .iter()
            .cloned()
            .zip(m.params().tensors().iter().cloned())
            .collect();
        assert_eq!(Mlp::from_tensors(cfg.clone(), 0, &named).unwrap(), m);
        assert!(Mlp::from_tensors(cfg, 0, &named[1..]).is_err());
    }
}
