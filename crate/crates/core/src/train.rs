//! Baseline and PAD training loops.
//!
//! A PAD mini-batch step runs, in order:
//!
//! 1. draw the neighbor count `K`;
//! 2. run the generator on the batch and draw one pseudo batch;
//! 3. update the generator on its loss (predictor held constant);
//! 4. draw a fresh pseudo batch from the updated generator;
//! 5. update the predictor on NLL plus the gated prior pull (generator held constant).
//!
//! In latent mode the generator works on the activations of one hidden layer
//! of the predictor, and pseudo rows enter the predictor after that layer.
//!
//! Each kind of randomness has its own stream (see [`crate::rng`]), so a PAD
//! run whose generator terms are all off and whose gate is pinned to zero
//! replays the baseline run exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Optimizer, OptimizerConfig, OptimizerKind};
use crate::datashift::Dataset;
use crate::error::{invalid, Error, Result};
use crate::generator::{pick_subset_size, sample_pseudo, standard_normal, Generator, GeneratorConfig, SubsetPolicy};
use crate::metrics::class_index;
use crate::nets::{ensemble_predict, mc_dropout_predict, Head, Mlp, MlpConfig, PredictiveDistribution};
use crate::objectives::{
    discriminator_loss, generator_loss, kl_weights, nll_node, DiscriminatorBreakdown, GeneratorBreakdown,
    PadHyperParams, PredictorPass,
};
use crate::rng::{member_seed, stream, Stream, StreamRng};
use crate::tensor::Tensor;

/// Parameter-set id of predictor weights.
pub const PREDICTOR_SET: u32 = 0;
/// Parameter-set id of generator weights.
pub const GENERATOR_SET: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BaselineMcDropout,
    BaselineEnsemble,
    PadMcDropout,
    PadEnsemble,
}

impl Method {
    pub fn is_pad(self) -> bool {
        matches!(self, Self::PadMcDropout | Self::PadEnsemble)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Self::BaselineEnsemble | Self::PadEnsemble)
    }

    /// The same predictor family without PAD.
    pub fn baseline(self) -> Self {
        match self {
            Self::PadMcDropout | Self::BaselineMcDropout => Self::BaselineMcDropout,
            Self::PadEnsemble | Self::BaselineEnsemble => Self::BaselineEnsemble,
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::BaselineMcDropout => "baseline_mc_dropout",
            Self::BaselineEnsemble => "baseline_ensemble",
            Self::PadMcDropout => "pad_mc_dropout",
            Self::PadEnsemble => "pad_ensemble",
        })
    }
}

/// Where pseudo-inputs live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PadSpace {
    Input,
    /// Activations after hidden layer `layer` (0-based).
    Latent {
        layer: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Predictor learning rate; defaults to 1e-2 for SGD and 1e-3 for Adam.
    #[serde(default)]
    pub lr_f: Option<f64>,
    #[serde(default = "default_lr_g")]
    pub lr_g: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_members")]
    pub ensemble_size: usize,
    /// Fast-gradient-sign augmentation for ensemble members.
    #[serde(default)]
    pub adversarial: bool,
    /// Step size of the adversarial perturbation as a fraction of each feature's range.
    #[serde(default = "default_adv_eps")]
    pub adversarial_eps: f64,
    /// Generator updates per predictor update.
    #[serde(default = "default_one")]
    pub generator_steps: usize,
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_lr_g() -> f64 {
    1e-3
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_members() -> usize {
    5
}
fn default_adv_eps() -> f64 {
    0.01
}
fn default_one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr_f: None,
            lr_g: default_lr_g(),
            optimizer: default_optimizer(),
            seed: 0,
            ensemble_size: default_members(),
            adversarial: false,
            adversarial_eps: default_adv_eps(),
            generator_steps: default_one(),
        }
    }
}

impl TrainConfig {
    pub fn lr_f(&self) -> f64 {
        self.lr_f.unwrap_or(match self.optimizer {
            OptimizerKind::Sgd => 1e-2,
            OptimizerKind::Adam => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("training.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("training.batch_size must be at least 1"));
        }
        if !(self.lr_f() > 0.0) {
            return Err(invalid!("training.lr_f must be positive, got {}", self.lr_f()));
        }
        if !(self.lr_g > 0.0) {
            return Err(invalid!("training.lr_g must be positive, got {}", self.lr_g));
        }
        if self.ensemble_size == 0 {
            return Err(invalid!("training.ensemble_size must be at least 1"));
        }
        if !(self.adversarial_eps >= 0.0) {
            return Err(invalid!("training.adversarial_eps must be nonnegative"));
        }
        if self.generator_steps == 0 {
            return Err(invalid!("training.generator_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadConfig {
    #[serde(default)]
    pub hyper: PadHyperParams,
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
    #[serde(default = "default_space")]
    pub space: PadSpace,
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
fn default_space() -> PadSpace {
    PadSpace::Input
}

impl Default for PadConfig {
    fn default() -> Self {
        Self {
            hyper: PadHyperParams::default(),
            enc_hidden: default_width(),
            code_dim: default_width(),
            dec_hidden: default_width(),
            subset: default_policy(),
            global_context: true,
            space: default_space(),
        }
    }
}

impl PadConfig {
    pub fn generator_config(&self, feature_dim: usize) -> GeneratorConfig {
        GeneratorConfig {
            feature_dim,
            enc_hidden: self.enc_hidden,
            code_dim: self.code_dim,
            dec_hidden: self.dec_hidden,
            subset: self.subset,
            global_context: self.global_context,
        }
    }

    /// Width of the space the generator works in.
    pub fn feature_dim(&self, model: &MlpConfig) -> Result<usize> {
        match self.space {
            PadSpace::Input => Ok(model.input_dim),
            PadSpace::Latent { layer } => model.hidden.get(layer).copied().ok_or_else(|| {
                invalid!(
                    "pad.space.layer {layer} out of range for {} hidden layers",
                    model.hidden.len()
                )
            }),
        }
    }

    /// First predictor layer applied to pseudo-inputs.
    pub fn from_layer(&self) -> usize {
        match self.space {
            PadSpace::Input => 0,
            PadSpace::Latent { layer } => layer + 1,
        }
    }

    /// Squared C-term threshold, active only for input-space regression.
    pub fn boundary_sq(&self, head: Head, dim: usize) -> Option<f64> {
        match (self.space, head) {
            (PadSpace::Input, Head::Gaussian) => Some(self.hyper.boundary_sq(dim)),
            _ => None,
        }
    }
}

/// Everything needed to train one predictor (or ensemble).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub model: MlpConfig,
    pub method: Method,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<PadConfig>,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        match (&self.pad, self.method.is_pad()) {
            (None, true) => return Err(invalid!("pad: required for method {}", self.method)),
            (Some(_), false) => return Err(invalid!("pad: not allowed for method {}", self.method)),
            (Some(p), true) => {
                p.hyper.validate()?;
                p.generator_config(p.feature_dim(&self.model)?).validate()?;
            }
            (None, false) => {}
        }
        Ok(())
    }

    pub fn members(&self) -> usize {
        if self.method.is_ensemble() {
            self.training.ensemble_size
        } else {
            1
        }
    }
}

/// Mean per-batch losses over one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub predictor: DiscriminatorBreakdown,
    /// Generator loss from the first generator step of each batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorBreakdown>,
    /// Batches too small for PAD terms.
    pub skipped_pad_batches: usize,
}

/// One trained predictor, its generator (PAD only) and its training log.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub model: Mlp,
    pub generator: Option<Generator>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub method: Method,
    pub members: Vec<Member>,
}

impl Predictor {
    /// MC-dropout predictors draw `samples` stochastic passes from `rng`;
    /// ensembles use one deterministic pass per member. PAD classifiers use
    /// tempered probabilities.
    pub fn predict(&self, x: &Tensor, samples: usize, rng: &mut StreamRng) -> Result<Vec<PredictiveDistribution>> {
        let tempered = self.method.is_pad();
        if self.method.is_ensemble() {
            let models: Vec<Mlp> = self.members.iter().map(|m| m.model.clone()).collect();
            ensemble_predict(&models, x, tempered)
        } else {
            let m = self
                .members
                .first()
                .ok_or_else(|| invalid!("predictor has no members"))?;
            mc_dropout_predict(&m.model, x, samples, tempered, rng)
        }
    }
}

struct Streams {
    shuffle: StreamRng,
    dropout: StreamRng,
    pad_dropout: StreamRng,
    noise: StreamRng,
    subset: StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            shuffle: stream(seed, Stream::Shuffle),
            dropout: stream(seed, Stream::Dropout),
            pad_dropout: stream(seed, Stream::PadDropout),
            noise: stream(seed, Stream::GeneratorNoise),
            subset: stream(seed, Stream::SubsetSize),
        }
    }
}

fn diverged(epoch: usize, batch: usize, what: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        batch,
        what: what.into(),
    }
}

fn with_context<T>(r: Result<T>, epoch: usize, batch: usize, what: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFiniteGradient { op } => diverged(epoch, batch, format!("{what}: non-finite gradient in {op}")),
        other => other,
    })
}

fn targets_match_head(data: &Dataset, head: Head) -> Result<()> {
    if let Head::Categorical { classes } = head {
        for &y in &data.y {
            class_index(y, classes)?;
        }
    }
    Ok(())
}

/// Trains every member of `spec` in sequence.
pub fn train(spec: &TrainSpec, data: &Dataset) -> Result<Predictor> {
    spec.validate()?;
    let members = (0..spec.members())
        .map(|i| train_member(spec, data, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictor {
        method: spec.method,
        members,
    })
}

/// Trains member `index` with seed `member_seed(training.seed, index)`.
/// Members are independent and may be trained concurrently.
pub fn train_member(spec: &TrainSpec, data: &Dataset, index: usize) -> Result<Member> {
    spec.validate()?;
    if data.dim() != spec.model.input_dim {
        return Err(invalid!(
            "model expects {} features, data has {}",
            spec.model.input_dim,
            data.dim()
        ));
    }
    targets_match_head(data, spec.model.head)?;
    let seed = member_seed(spec.training.seed, index);
    let mut model = Mlp::new(spec.model.clone(), PREDICTOR_SET, &mut stream(seed, Stream::Init))?;
    let mut opt_f = Optimizer::new(OptimizerConfig {
        kind: spec.training.optimizer,
        lr: spec.training.lr_f(),
    })?;
    let mut generator = match &spec.pad {
        Some(p) => Some(Generator::new(
            p.generator_config(p.feature_dim(&spec.model)?),
            GENERATOR_SET,
            &mut stream(seed, Stream::GeneratorInit),
        )?),
        None => None,
    };
    let mut opt_g = Optimizer::new(OptimizerConfig {
        kind: spec.training.optimizer,
        lr: spec.training.lr_g,
    })?;
    let adv_eps: Option<Vec<f64>> = (spec.method.is_ensemble() && spec.training.adversarial).then(|| {
        data.feature_ranges()
            .into_iter()
            .map(|(lo, hi)| spec.training.adversarial_eps * (hi - lo))
            .collect()
    });

    let mut rngs = Streams::new(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(spec.training.epochs);
    for epoch in 0..spec.training.epochs {
        order.shuffle(&mut rngs.shuffle);
        let mut entry = EpochLog {
            epoch,
            ..Default::default()
        };
        let mut pred_sum = DiscriminatorBreakdown::default();
        let mut gen_sum = GeneratorBreakdown::default();
        let (mut batches, mut gen_batches) = (0usize, 0usize);
        for (batch, idx) in order.chunks(spec.training.batch_size).enumerate() {
            let xb = data.x.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            let step = match (&spec.pad, generator.as_mut()) {
                (Some(pad), Some(gen)) if idx.len() >= 2 => {
                    let (d, g) = pad_step(
                        &mut model,
                        &mut opt_f,
                        gen,
                        &mut opt_g,
                        pad,
                        &spec.training,
                        &xb,
                        &yb,
                        &mut rngs,
                        epoch,
                        batch,
                    )?;
                    if let Some(g) = g {
                        gen_sum.total += g.total;
                        gen_sum.term_a += g.term_a;
                        gen_sum.term_b += g.term_b;
                        gen_sum.term_c += g.term_c;
                        gen_batches += 1;
                    }
                    d
                }
                (pad, _) => {
                    if pad.is_some() {
                        entry.skipped_pad_batches += 1;
                    }
                    baseline_step(
                        &mut model,
                        &mut opt_f,
                        &xb,
                        &yb,
                        adv_eps.as_deref(),
                        &mut rngs,
                        epoch,
                        batch,
                    )?
                }
            };
            pred_sum.total += step.total;
            pred_sum.nll += step.nll;
            pred_sum.regularizer += step.regularizer;
            batches += 1;
        }
        let nb = batches as f64;
        entry.predictor = DiscriminatorBreakdown {
            total: pred_sum.total / nb,
            nll: pred_sum.nll / nb,
            regularizer: pred_sum.regularizer / nb,
        };
        if gen_batches > 0 {
            let ng = gen_batches as f64;
            entry.generator = Some(GeneratorBreakdown {
                total: gen_sum.total / ng,
                term_a: gen_sum.term_a / ng,
                term_b: gen_sum.term_b / ng,
                term_c: gen_sum.term_c / ng,
            });
        }
        log.push(entry);
    }
    Ok(Member { model, generator, log })
}

#[allow(clippy::too_many_arguments)]
fn baseline_step(
    model: &mut Mlp,
    opt: &mut Optimizer,
    xb: &Tensor,
    yb: &[f64],
    adv_eps: Option<&[f64]>,
    rngs: &mut Streams,
    epoch: usize,
    batch: usize,
) -> Result<DiscriminatorBreakdown> {
    let masks = model.sample_masks(xb.rows(), &mut rngs.dropout);
    let head = model.config().head;
    let mut g = Graph::new();
    let net = model.bind(&mut g);
    let xv = g.constant(xb.clone());
    let raw = net.forward(&mut g, xv, masks.as_deref())?;
    let mut loss = nll_node(&mut g, raw, yb, head)?;
    let nll = g.scalar(loss)?;
    if !nll.is_finite() {
        return Err(diverged(epoch, batch, "predictor nll"));
    }
    if let Some(eps) = adv_eps {
        let grads = with_context(g.backward_full(loss), epoch, batch, "adversarial input")?;
        let gx = grads
            .of(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(xb.rows(), xb.cols()));
        let adv = Tensor::from_fn(xb.rows(), xb.cols(), |i, j| {
            let s = gx.get(i, j);
            let sign = if s > 0.0 {
                1.0
            } else if s < 0.0 {
                -1.0
            } else {
                0.0
            };
            xb.get(i, j) + eps[j] * sign
        });
        let av = g.constant(adv);
        let raw_adv = net.forward(&mut g, av, masks.as_deref())?;
        let nll_adv = nll_node(&mut g, raw_adv, yb, head)?;
        loss = g.add(loss, nll_adv)?;
    }
    let total = g.scalar(loss)?;
    if !total.is_finite() {
        return Err(diverged(epoch, batch, "predictor loss"));
    }
    let grads = with_context(g.backward(loss), epoch, batch, "predictor")?;
    opt.step(model.params_mut(), &grads)?;
    Ok(DiscriminatorBreakdown {
        total,
        nll,
        regularizer: total - nll,
    })
}

#[allow(clippy::too_many_arguments)]
fn pad_step(
    model: &mut Mlp,
    opt_f: &mut Optimizer,
    gen: &mut Generator,
    opt_g: &mut Optimizer,
    pad: &PadConfig,
    training: &TrainConfig,
    xb: &Tensor,
    yb: &[f64],
    rngs: &mut Streams,
    epoch: usize,
    batch: usize,
) -> Result<(DiscriminatorBreakdown, Option<GeneratorBreakdown>)> {
    let head = model.config().head;
    let depth = model.config().depth();
    let hyper = &pad.hyper;
    let k = pick_subset_size(xb.rows(), pad.subset, &mut rngs.subset)?;
    let feats = match pad.space {
        PadSpace::Input => xb.clone(),
        PadSpace::Latent { layer } => model.features(xb, layer)?,
    };
    let dim = feats.cols();
    let boundary = pad.boundary_sq(head, dim);
    let from_layer = pad.from_layer();

    let mut gen_report = None;
    let terms = hyper.terms;
    let theta = model.params().checksum();
    if terms.a || terms.b || terms.c {
        for _ in 0..training.generator_steps {
            let masks = model.sample_masks(xb.rows(), &mut rngs.pad_dropout);
            let mut g = Graph::new();
            let bound = gen.bind(&mut g);
            let net = model.bind_detached(&mut g);
            let xv = g.constant(feats.clone());
            let pb = bound.forward(&mut g, xv, k)?;
            let noise = standard_normal(xb.rows(), dim, &mut rngs.noise);
            let xt = sample_pseudo(&mut g, &pb, &noise)?;
            let pass = PredictorPass {
                net: &net,
                from_layer,
                depth,
                head,
                masks: masks.as_deref(),
            };
            let (loss, parts) = generator_loss(&mut g, &pass, &pb, xt, &feats, hyper, boundary)?;
            if !parts.total.is_finite() {
                return Err(diverged(epoch, batch, "generator loss"));
            }
            let grads = with_context(g.backward(loss), epoch, batch, "generator")?;
            opt_g.step(gen.params_mut(), &grads)?;
            gen_report.get_or_insert(parts);
        }
    }

    debug_assert_eq!(
        theta,
        model.params().checksum(),
        "generator step changed predictor parameters"
    );
    let phi = gen.params().checksum();

    let dist = gen.distribution(&feats, k)?;
    let noise = standard_normal(xb.rows(), dim, &mut rngs.noise);
    let pseudo = Tensor::from_fn(xb.rows(), dim, |i, j| {
        dist.mu.get(i, j) + dist.sigma.get(i, j) * noise.get(i, j)
    });
    let lambdas = kl_weights(&pseudo, &feats, hyper)?;

    let masks = model.sample_masks(xb.rows(), &mut rngs.dropout);
    let pad_masks = model.sample_masks(xb.rows(), &mut rngs.pad_dropout);
    let mut g = Graph::new();
    let net = model.bind(&mut g);
    let xv = g.constant(xb.clone());
    let raw = net.forward(&mut g, xv, masks.as_deref())?;
    let pv = g.constant(pseudo);
    let praw = net.forward_span(&mut g, pv, from_layer, depth, pad_masks.as_deref())?;
    let (loss, parts) = discriminator_loss(&mut g, raw, yb, Some((praw, &lambdas)), hyper, head)?;
    if !parts.total.is_finite() {
        return Err(diverged(epoch, batch, "predictor loss"));
    }
    let grads = with_context(g.backward(loss), epoch, batch, "predictor")?;
    opt_f.step(model.params_mut(), &grads)?;
    debug_assert_eq!(
        phi,
        gen.params().checksum(),
        "predictor step changed generator parameters"
    );
    Ok((parts, gen_report))
}
