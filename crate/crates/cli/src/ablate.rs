//! Term-switch ablation grid.

use pad_core::autodiff::Graph;
use pad_core::datashift::Dataset;
use pad_core::generator::{pick_subset_size, sample_pseudo, standard_normal};
use pad_core::objectives::{
    c_term, discriminator_loss, generator_loss, kl_weights, DiscriminatorBreakdown, GeneratorBreakdown, PredictorPass,
    TermSwitches,
};
use pad_core::rng::{stream, Stream};
use pad_core::train::{EpochLog, Member, Method, PadConfig, PadSpace};
use pad_core::Tensor;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, SplitConfig, Task, ToyName};
use crate::experiment::{load_dataset, make_splits, prepare, run_experiment, train_parallel, Aggregate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WithoutA,
    WithoutB,
    WithoutAb,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::WithoutA, Variant::WithoutB, Variant::WithoutAb];

    pub fn switches(self) -> TermSwitches {
        match self {
            Variant::Full => TermSwitches::ALL,
            Variant::WithoutA => TermSwitches {
                a: false,
                ..TermSwitches::ALL
            },
            Variant::WithoutB => TermSwitches {
                b: false,
                ..TermSwitches::ALL
            },
            Variant::WithoutAb => TermSwitches {
                c: true,
                ..TermSwitches::NONE
            },
        }
    }
}

/// Two-segment regression with the second segment held out, PAD MC dropout.
pub fn default_config() -> ExperimentConfig {
    let mut pad = PadConfig::default();
    pad.hyper.length_scale = 0.2;
    ExperimentConfig {
        task: Task::Regression,
        data: DataSource::Toy {
            name: ToyName::TwoManifold,
            n_per: 150,
            seed: 0,
        },
        model: pad_core::nets::MlpConfig::standard(2, pad_core::nets::Head::Gaussian),
        method: Method::PadMcDropout,
        pad: Some(pad),
        training: pad_core::train::TrainConfig {
            lr_f: Some(5e-3),
            ..Default::default()
        },
        eval: Default::default(),
        split: SplitConfig {
            k: 2,
            count: 1,
            ..Default::default()
        },
        standardize_target: true,
        tune: None,
    }
}

/// Losses of one fixed state evaluated under one switch setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub variant: Variant,
    pub generator: GeneratorBreakdown,
    pub predictor: DiscriminatorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub batch_rows: usize,
    pub k: usize,
    /// Term C of the probe batch by direct evaluation.
    pub c_direct: f64,
    pub rows: Vec<ProbeRow>,
    /// Empty when every switch-independence invariant holds.
    pub violations: Vec<String>,
}

/// Evaluates generator and predictor losses of `member` on one batch under
/// every variant, sharing masks, noise and subset size across variants.
pub fn probe(member: &Member, pad: &PadConfig, data: &Dataset, batch_size: usize, seed: u64) -> anyhow::Result<Probe> {
    let gen = member
        .generator
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("the probe needs a PAD member with a generator"))?;
    let model = &member.model;
    let head = model.config().head;
    let depth = model.config().depth();
    let b = batch_size.min(data.len());
    let idx = sample(&mut stream(seed, Stream::Shuffle), data.len(), b).into_vec();
    let xb = data.x.select_rows(&idx);
    let yb: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
    let feats = match pad.space {
        PadSpace::Input => xb.clone(),
        PadSpace::Latent { layer } => model.features(&xb, layer)?,
    };
    let dim = feats.cols();
    let k = pick_subset_size(b, pad.subset, &mut stream(seed, Stream::SubsetSize))?;
    let boundary = pad.boundary_sq(head, dim);
    let gen_masks = model.sample_masks(b, &mut stream(seed, Stream::PadDropout));
    let noise = standard_normal(b, dim, &mut stream(seed, Stream::GeneratorNoise));
    let nat_masks = model.sample_masks(b, &mut stream(seed, Stream::Dropout));

    let mut rows = Vec::with_capacity(Variant::ALL.len());
    let mut c_direct = f64::NAN;
    for variant in Variant::ALL {
        let mut hyper = pad.hyper.clone();
        hyper.terms = variant.switches();

        let mut g = Graph::new();
        let bound = gen.bind(&mut g);
        let net = model.bind_detached(&mut g);
        let xv = g.constant(feats.clone());
        let pb = bound.forward(&mut g, xv, k)?;
        let xt = sample_pseudo(&mut g, &pb, &noise)?;
        if variant == Variant::Full {
            c_direct = c_term(g.value(xt), &feats, k, boundary)?;
        }
        let pass = PredictorPass {
            net: &net,
            from_layer: pad.from_layer(),
            depth,
            head,
            masks: gen_masks.as_deref(),
        };
        let (_, generator) = generator_loss(&mut g, &pass, &pb, xt, &feats, &hyper, boundary)?;

        let pseudo: Tensor = g.value(xt).clone();
        let lambdas = kl_weights(&pseudo, &feats, &hyper)?;
        let mut g = Graph::new();
        let net = model.bind(&mut g);
        let xv = g.constant(xb.clone());
        let raw = net.forward(&mut g, xv, nat_masks.as_deref())?;
        let pv = g.constant(pseudo);
        let praw = net.forward_span(&mut g, pv, pad.from_layer(), depth, gen_masks.as_deref())?;
        let (_, predictor) = discriminator_loss(&mut g, raw, &yb, Some((praw, &lambdas)), &hyper, head)?;
        rows.push(ProbeRow {
            variant,
            generator,
            predictor,
        });
    }
    let violations = check_probe(&rows, c_direct);
    Ok(Probe {
        batch_rows: b,
        k,
        c_direct,
        rows,
        violations,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Checks that each term is unaffected by the other switches, that disabled
/// terms vanish, that totals are sums of enabled terms, that the C-only total
/// equals the direct term C, and that the predictor loss ignores the switches.
pub fn check_probe(rows: &[ProbeRow], c_direct: f64) -> Vec<String> {
    let mut out = Vec::new();
    let Some(full) = rows.iter().find(|r| r.variant == Variant::Full) else {
        return vec!["no full variant".into()];
    };
    for r in rows {
        let s = r.variant.switches();
        let g = &r.generator;
        for (name, on, v, reference) in [
            ("A", s.a, g.term_a, full.generator.term_a),
            ("B", s.b, g.term_b, full.generator.term_b),
            ("C", s.c, g.term_c, full.generator.term_c),
        ] {
            if on && v != reference {
                out.push(format!(
                    "{:?}: term {name} {v} differs from full {reference}",
                    r.variant
                ));
            }
            if !on && v != 0.0 {
                out.push(format!("{:?}: disabled term {name} is {v}", r.variant));
            }
        }
        let sum = g.term_a + g.term_b + g.term_c;
        if !close(g.total, sum) {
            out.push(format!(
                "{:?}: total {} is not the sum of terms {sum}",
                r.variant, g.total
            ));
        }
        if r.predictor != full.predictor {
            out.push(format!("{:?}: predictor loss depends on generator switches", r.variant));
        }
        if r.variant == Variant::WithoutAb && !close(g.total, c_direct) {
            out.push(format!("WithoutAb: total {} differs from term C {c_direct}", g.total));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub terms: TermSwitches,
    pub aggregate: Aggregate,
    /// Last-epoch losses of the first member of the first successful split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_epoch: Option<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub variants: Vec<VariantResult>,
    pub probe: Probe,
    pub invariants_hold: bool,
}

/// Runs the experiment of `cfg` once per variant, then probes a model trained
/// with all terms on the first split.
pub fn run_ablation(cfg: &ExperimentConfig) -> anyhow::Result<AblationReport> {
    let pad = cfg
        .pad
        .as_ref()
        .filter(|_| cfg.method.is_pad())
        .ok_or_else(|| anyhow::anyhow!("method: ablation needs a PAD method with a pad block"))?;
    cfg.validate()?;
    let data = load_dataset(&cfg.data)?;
    let splits = make_splits(
        &data,
        cfg.split.k,
        cfg.split.count,
        cfg.split.min_test_frac,
        cfg.split.cluster_seed,
    )?;
    let mut variants = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut c = cfg.clone();
        if let Some(p) = c.pad.as_mut() {
            p.hyper.terms = variant.switches();
        }
        let outcome = run_experiment(&c, &data, &splits)?;
        variants.push(VariantResult {
            variant,
            terms: variant.switches(),
            last_epoch: outcome
                .results
                .first()
                .and_then(|r| r.logs.first())
                .and_then(|l| l.last())
                .copied(),
            aggregate: outcome.aggregate,
        });
    }

    let standardize = cfg.standardize_target && cfg.task == Task::Regression;
    let prep = prepare(
        &data,
        &splits[0],
        cfg.split.holdout_frac,
        cfg.training.seed,
        standardize,
    )?;
    let mut spec = cfg.train_spec();
    if let Some(p) = spec.pad.as_mut() {
        p.hyper.terms = TermSwitches::ALL;
    }
    let predictor = train_parallel(&spec, &prep.train)?;
    let probe = probe(
        &predictor.members[0],
        pad,
        &prep.train,
        cfg.training.batch_size,
        cfg.training.seed,
    )?;
    Ok(AblationReport {
        config_hash: cfg.hash(),
        invariants_hold: probe.violations.is_empty(),
        variants,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_switches() {
        assert_eq!(Variant::Full.switches(), TermSwitches::ALL);
        let s = Variant::WithoutAb.switches();
        assert!(!s.a && !s.b && s.c);
        let s = Variant::WithoutB.switches();
        assert!(s.a && !s.b && s.c);
    }

    #[test]
    fn check_probe_flags_leaks() {
        let g = GeneratorBreakdown {
            total: 6.0,
            term_a: 1.0,
            term_b: 2.0,
            term_c: 3.0,
        };
        let p = DiscriminatorBreakdown::default();
        let mut rows: Vec<ProbeRow> = Variant::ALL
            .iter()
            .map(|&variant| {
                let s = variant.switches();
                let mut g = g;
                g.term_a *= s.a as u8 as f64;
                g.term_b *= s.b as u8 as f64;
                g.total = g.term_a + g.term_b + g.term_c;
                ProbeRow {
                    variant,
                    generator: g,
                    predictor: p,
                }
            })
            .collect();
        assert!(check_probe(&rows, 3.0).is_empty());
        rows[1].generator.term_b = 2.5;
        assert_eq!(check_probe(&rows, 3.0).len(), 2);
    }

    #[test]
    fn default_config_is_valid() {
        default_config().validate().unwrap();
    }
}
