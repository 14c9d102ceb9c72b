//! PAD loss terms.
//!
//! Generator loss per mini-batch, with a single reparameterized sample `x~`:
//!
//! ```text
//! A = mean_n H[p(y | x~_n)]          predictor entropy at the pseudo-inputs
//! B = -mean_n H[q(x~_n)]             minus the generator's own entropy
//! C = 1/(BK) sum_n sum_{m in nn_K(x~_n)} max(0, |x~_n - x_m|^2 - c^2)
//! ```
//!
//! Discriminator loss: mean NLL on natural data plus
//! `mean_n lambda_n * KL_n`, with `lambda_n = 1 - exp(-min_m |x~_n - x_m|^2 / 2l^2)`.
//! For regression `KL_n = KL[N(mu, sigma) || N(mu, 1)]`; for classification
//! the prior pull is the temperature penalty `(tau^lambda_n - t_n)^2`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::generator::{nearest_rows, PseudoBatch};
use crate::metrics::class_index;
use crate::nets::{categorical_head, gaussian_head, BoundMlp, Head};
use crate::tensor::Tensor;

/// `0.5 * ln(2 pi e)`, the entropy of a unit Gaussian.
pub const UNIT_GAUSSIAN_ENTROPY: f64 = 1.4189385332046727;
/// `0.5 * ln(2 pi)`.
pub const HALF_LN_TWO_PI: f64 = 0.9189385332046727;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSwitches {
    pub a: bool,
    pub b: bool,
    pub c: bool,
}

impl TermSwitches {
    pub const ALL: Self = Self {
        a: true,
        b: true,
        c: true,
    };
    pub const NONE: Self = Self {
        a: false,
        b: false,
        c: false,
    };
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self::ALL
    }
}

/// Threshold below which a squared pseudo/real distance costs nothing in term C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `|1^d|`, i.e. a squared threshold of `d`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadHyperParams {
    /// Length scale `l` of the distance gate.
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    /// Maximum temperature `tau` for classification.
    #[serde(default = "default_tau")]
    pub max_temperature: f64,
    #[serde(default = "default_boundary")]
    pub c_boundary: Boundary,
    #[serde(default)]
    pub terms: TermSwitches,
    /// Replaces every `lambda_n` by this constant (ablations and replay tests).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

fn default_length_scale() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    10.0
}

fn default_boundary() -> Boundary {
    Boundary::Auto
}

impl Default for PadHyperParams {
    fn default() -> Self {
        Self {
            length_scale: default_length_scale(),
            max_temperature: default_tau(),
            c_boundary: default_boundary(),
            terms: TermSwitches::ALL,
            fixed_lambda: None,
        }
    }
}

impl PadHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) {
            return Err(invalid!("length_scale must be positive, got {}", self.length_scale));
        }
        if !(self.max_temperature > 1.0) {
            return Err(invalid!("max_temperature must exceed 1, got {}", self.max_temperature));
        }
        if let Boundary::Fixed(c) = self.c_boundary {
            if !(c >= 0.0) {
                return Err(invalid!("c_boundary must be nonnegative, got {c}"));
            }
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(invalid!("fixed_lambda must lie in [0, 1], got {l}"));
            }
        }
        Ok(())
    }

    /// Squared C-term threshold for `dim`-dimensional inputs.
    pub fn boundary_sq(&self, dim: usize) -> f64 {
        match self.c_boundary {
            Boundary::Auto => dim as f64,
            Boundary::Fixed(c) => c * c,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBreakdown {
    pub total: f64,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorBreakdown {
    pub total: f64,
    pub nll: f64,
    pub regularizer: f64,
}

pub fn gaussian_entropy(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid!("sigma must be positive, got {sigma}"));
    }
    Ok(UNIT_GAUSSIAN_ENTROPY + libm::log(sigma))
}

/// Entropy of a diagonal Gaussian: the sum of per-dimension entropies.
pub fn gaussian_entropy_diag(sigmas: &[f64]) -> Result<f64> {
    sigmas.iter().map(|&s| gaussian_entropy(s)).sum()
}

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn categorical_entropy(p: &[f64]) -> Result<f64> {
    if let Some(v) = p.iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(invalid!("probabilities must be nonnegative, got {v}"));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum::<f64>())
}

/// `KL[N(mu, sigma) || N(mu, 1)] = -ln sigma + sigma^2 / 2 - 1/2`.
pub fn regression_prior_kl(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid!("sigma must be positive, got {sigma}"));
    }
    Ok(-libm::log(sigma) + 0.5 * sigma * sigma - 0.5)
}

/// `(tau^lambda - t)^2`.
pub fn classification_temperature_penalty(t: f64, lambda: f64, tau: f64) -> f64 {
    let target = libm::pow(tau, lambda);
    (target - t) * (target - t)
}

/// Distance gate `1 - exp(-min_m |x~ - x_m|^2 / 2 l^2)` for one pseudo-input.
pub fn kl_weight(x_tilde: &[f64], batch: &Tensor, length_scale: f64) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(invalid!("kl_weight needs a non-empty batch"));
    }
    if !(length_scale > 0.0) {
        return Err(invalid!("length_scale must be positive, got {length_scale}"));
    }
    let min = (0..batch.rows())
        .map(|m| {
            batch
                .row_slice(m)
                .iter()
                .zip(x_tilde)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(-libm::expm1(-min / (2.0 * length_scale * length_scale)))
}

/// Gate for every row of `x_tilde`, or the fixed override when set.
pub fn kl_weights(x_tilde: &Tensor, batch: &Tensor, hyper: &PadHyperParams) -> Result<Vec<f64>> {
    if let Some(l) = hyper.fixed_lambda {
        return Ok(alloc::vec![l; x_tilde.rows()]);
    }
    (0..x_tilde.rows())
        .map(|n| kl_weight(x_tilde.row_slice(n), batch, hyper.length_scale))
        .collect()
}

fn c_term_neighbors(x_tilde: &Tensor, batch: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    if x_tilde.cols() != batch.cols() {
        return Err(crate::Error::ShapeMismatch {
            op: "c_term",
            lhs: x_tilde.shape(),
            rhs: batch.shape(),
        });
    }
    if k == 0 || k > batch.rows() {
        return Err(invalid!("K = {k} outside [1, {}]", batch.rows()));
    }
    Ok((0..x_tilde.rows())
        .map(|n| nearest_rows(batch, x_tilde.row_slice(n), k, None))
        .collect())
}

/// Term C by direct evaluation. `boundary_sq = None` disables the threshold.
pub fn c_term(x_tilde: &Tensor, batch: &Tensor, k: usize, boundary_sq: Option<f64>) -> Result<f64> {
    let neighbors = c_term_neighbors(x_tilde, batch, k)?;
    let mut acc = 0.0;
    for (n, list) in neighbors.iter().enumerate() {
        for &m in list {
            let d: f64 = x_tilde
                .row_slice(n)
                .iter()
                .zip(batch.row_slice(m))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += match boundary_sq {
                Some(c2) => (d - c2).max(0.0),
                None => d,
            };
        }
    }
    Ok(acc / (x_tilde.rows() * k) as f64)
}

/// Term C as a graph node, differentiable with respect to `x_tilde`.
pub fn c_term_node(g: &mut Graph, x_tilde: Var, batch: &Tensor, k: usize, boundary_sq: Option<f64>) -> Result<Var> {
    let neighbors = c_term_neighbors(g.value(x_tilde), batch, k)?;
    let b = g.shape(x_tilde).rows;
    let mut mask = Tensor::zeros(b, batch.rows());
    for (n, list) in neighbors.iter().enumerate() {
        for &m in list {
            mask.set(n, m, 1.0);
        }
    }
    let real = g.constant(batch.clone());
    let mut d = g.sq_dist(x_tilde, real)?;
    if let Some(c2) = boundary_sq {
        d = g.add_scalar(d, -c2);
        d = g.relu(d);
    }
    let mask = g.constant(mask);
    let picked = g.mul(d, mask)?;
    let s = g.sum(picked);
    Ok(g.scale(s, 1.0 / (b * k) as f64))
}

/// A predictor evaluated from layer `from_layer` on, with optional dropout masks.
#[derive(Debug, Clone, Copy)]
pub struct PredictorPass<'a> {
    pub net: &'a BoundMlp,
    pub from_layer: usize,
    pub depth: usize,
    pub head: Head,
    pub masks: Option<&'a [Tensor]>,
}

impl PredictorPass<'_> {
    pub fn run(&self, g: &mut Graph, input: Var) -> Result<Var> {
        self.net.forward_span(g, input, self.from_layer, self.depth, self.masks)
    }
}

/// Per-row predictive entropy `B x 1` of raw head outputs.
fn predictive_entropy(g: &mut Graph, raw: Var, head: Head) -> Result<Var> {
    match head {
        Head::Gaussian => {
            let (_, sigma) = gaussian_head(g, raw)?;
            let ls = g.log(sigma);
            Ok(g.add_scalar(ls, UNIT_GAUSSIAN_ENTROPY))
        }
        Head::Categorical { classes } => {
            let (logits, log_t) = categorical_head(g, raw, classes)?;
            let t = g.exp(log_t);
            let scaled = g.div(logits, t)?;
            let logp = g.log_softmax(scaled);
            let p = g.exp(logp);
            let plogp = g.mul(p, logp)?;
            let s = g.sum_cols(plogp);
            Ok(g.neg(s))
        }
    }
}

/// Generator loss with gradients flowing to the generator only: `predictor`
/// must be bound detached.
pub fn generator_loss(
    g: &mut Graph,
    predictor: &PredictorPass<'_>,
    pseudo: &PseudoBatch,
    x_tilde: Var,
    batch: &Tensor,
    hyper: &PadHyperParams,
    boundary_sq: Option<f64>,
) -> Result<(Var, GeneratorBreakdown)> {
    let terms = hyper.terms;
    let mut parts: Vec<Var> = Vec::with_capacity(3);
    let mut out = GeneratorBreakdown::default();

    if terms.a {
        let raw = predictor.run(g, x_tilde)?;
        let h = predictive_entropy(g, raw, predictor.head)?;
        let a = g.mean(h);
        out.term_a = g.scalar(a)?;
        parts.push(a);
    }
    if terms.b {
        let s = g.shape(pseudo.sigma);
        let ls = g.log(pseudo.sigma);
        let total = g.sum(ls);
        let per_point = g.scale(total, 1.0 / s.rows as f64);
        let h = g.add_scalar(per_point, s.cols as f64 * UNIT_GAUSSIAN_ENTROPY);
        let b = g.neg(h);
        out.term_b = g.scalar(b)?;
        parts.push(b);
    }
    if terms.c {
        let c = c_term_node(g, x_tilde, batch, pseudo.k, boundary_sq)?;
        out.term_c = g.scalar(c)?;
        parts.push(c);
    }

    let total = match parts.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &p in rest {
                acc = g.add(acc, p)?;
            }
            acc
        }
    };
    out.total = g.scalar(total)?;
    Ok((total, out))
}

/// Mean negative log-likelihood of natural targets from raw head outputs.
/// Classification uses the class logits untempered.
pub fn nll_node(g: &mut Graph, raw: Var, targets: &[f64], head: Head) -> Result<Var> {
    let rows = g.shape(raw).rows;
    if targets.len() != rows {
        return Err(invalid!("{} targets for {rows} predictions", targets.len()));
    }
    match head {
        Head::Gaussian => {
            let (mu, sigma) = gaussian_head(g, raw)?;
            let y = g.constant(Tensor::column(targets));
            let r = g.sub(y, mu)?;
            let z = g.div(r, sigma)?;
            let z2 = g.square(z);
            let half = g.scale(z2, 0.5);
            let ls = g.log(sigma);
            let per = g.add(half, ls)?;
            let m = g.mean(per);
            Ok(g.add_scalar(m, HALF_LN_TWO_PI))
        }
        Head::Categorical { classes } => {
            let (logits, _) = categorical_head(g, raw, classes)?;
            let mut onehot = Tensor::zeros(rows, classes);
            for (i, &y) in targets.iter().enumerate() {
                onehot.set(i, class_index(y, classes)?, 1.0);
            }
            let logp = g.log_softmax(logits);
            let oh = g.constant(onehot);
            let picked = g.mul(logp, oh)?;
            let s = g.sum(picked);
            Ok(g.scale(s, -1.0 / rows as f64))
        }
    }
}

/// Per-row prior-pull term `B x 1` for pseudo-input head outputs.
fn prior_pull(g: &mut Graph, raw: Var, lambdas: &[f64], hyper: &PadHyperParams, head: Head) -> Result<Var> {
    let w = g.constant(Tensor::column(lambdas));
    let term = match head {
        Head::Gaussian => {
            let (_, sigma) = gaussian_head(g, raw)?;
            let ls = g.log(sigma);
            let s2 = g.square(sigma);
            let half = g.scale(s2, 0.5);
            let kl = g.sub(half, ls)?;
            g.add_scalar(kl, -0.5)
        }
        Head::Categorical { classes } => {
            let (_, log_t) = categorical_head(g, raw, classes)?;
            let t = g.exp(log_t);
            let targets: Vec<f64> = lambdas.iter().map(|&l| libm::pow(hyper.max_temperature, l)).collect();
            let target = g.constant(Tensor::column(&targets));
            let diff = g.sub(target, t)?;
            g.square(diff)
        }
    };
    g.mul(term, w)
}

/// Discriminator loss: NLL on natural rows plus the gated prior pull on
/// pseudo rows. `pseudo_raw` must not depend on generator parameters.
pub fn discriminator_loss(
    g: &mut Graph,
    natural_raw: Var,
    targets: &[f64],
    pseudo_raw: Option<(Var, &[f64])>,
    hyper: &PadHyperParams,
    head: Head,
) -> Result<(Var, DiscriminatorBreakdown)> {
    let nll = nll_node(g, natural_raw, targets, head)?;
    let mut out = DiscriminatorBreakdown {
        nll: g.scalar(nll)?,
        ..Default::default()
    };
    let Some((raw, lambdas)) = pseudo_raw else {
        out.total = out.nll;
        return Ok((nll, out));
    };
    if lambdas.len() != g.shape(raw).rows {
        return Err(invalid!(
            "{} weights for {} pseudo rows",
            lambdas.len(),
            g.shape(raw).rows
        ));
    }
    let pull = prior_pull(g, raw, lambdas, hyper, head)?;
    let reg = g.mean(pull);
    let total = g.add(nll, reg)?;
    out.regularizer = g.scalar(reg)?;
    out.total = g.scalar(total)?;
    Ok((total, out))
}
