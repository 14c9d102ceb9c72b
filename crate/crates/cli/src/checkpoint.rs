//! Versioned JSON checkpoints.

use std::path::Path;

use anyhow::{bail, Context};
use pad_core::datashift::Scaler;
use pad_core::generator::Generator;
use pad_core::nets::Mlp;
use pad_core::train::{Member, Predictor, TrainSpec, GENERATOR_SET, PREDICTOR_SET};
use pad_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberWeights {
    pub model: NamedTensors,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<NamedTensors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: TrainSpec,
    /// Seed of the run; evaluation draws from its evaluation stream.
    pub seed: u64,
    pub eval: EvalConfig,
    pub x_scaler: Scaler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_scaler: Option<Scaler>,
    pub members: Vec<MemberWeights>,
}

fn named(set: &pad_core::autodiff::ParamSet) -> NamedTensors {
    set.names().iter().cloned().zip(set.tensors().iter().cloned()).collect()
}

impl Checkpoint {
    pub fn new(
        spec: &TrainSpec,
        seed: u64,
        eval: EvalConfig,
        x_scaler: Scaler,
        y_scaler: Option<Scaler>,
        predictor: &Predictor,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            spec: spec.clone(),
            seed,
            eval,
            x_scaler,
            y_scaler,
            members: predictor
                .members
                .iter()
                .map(|m| MemberWeights {
                    model: named(m.model.params()),
                    generator: m.generator.as_ref().map(|g| named(g.params())),
                })
                .collect(),
        }
    }

    /// Rebuilds the predictor, checking every tensor name and shape.
    pub fn predictor(&self) -> anyhow::Result<Predictor> {
        self.spec.validate()?;
        let gen_config = match &self.spec.pad {
            Some(p) => Some(p.generator_config(p.feature_dim(&self.spec.model)?)),
            None => None,
        };
        let members = self
            .members
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let model = Mlp::from_tensors(self.spec.model.clone(), PREDICTOR_SET, &w.model)
                    .with_context(|| format!("member {i} predictor weights"))?;
                let generator = match (&gen_config, &w.generator) {
                    (Some(c), Some(t)) => Some(
                        Generator::from_tensors(c.clone(), GENERATOR_SET, t)
                            .with_context(|| format!("member {i} generator weights"))?,
                    ),
                    (None, None) => None,
                    (Some(_), None) => bail!("member {i}: generator weights missing for a PAD method"),
                    (None, Some(_)) => bail!("member {i}: generator weights present for a baseline method"),
                };
                Ok(Member {
                    model,
                    generator,
                    log: Vec::new(),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        if members.len() != self.spec.members() {
            bail!(
                "checkpoint holds {} members, spec expects {}",
                members.len(),
                self.spec.members()
            );
        }
        Ok(Predictor {
            method: self.spec.method,
            members,
        })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let c: Self = serde_json::from_str(&text).with_context(|| format!("invalid checkpoint {}", path.display()))?;
        if c.version != CHECKPOINT_VERSION {
            bail!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            );
        }
        Ok(c)
    }
}
