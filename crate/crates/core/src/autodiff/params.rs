use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Graph, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId {
    pub set: u32,
    pub slot: u32,
}

impl ParamId {
    pub const fn new(set: u32, slot: u32) -> Self {
        Self { set, slot }
    }
}

/// Named, ordered collection of trainable tensors sharing a set id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    id: u32,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(id: u32) -> Self {
        Self {
            id,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId::new(self.id, (self.tensors.len() - 1) as u32)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len() as u32).map(move |slot| ParamId::new(self.id, slot))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Replaces all tensors, checking names and shapes against the current set.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(invalid!("expected {} tensors, got {}", self.tensors.len(), named.len()));
        }
        for (i, (name, t)) in named.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(invalid!(
                    "tensor {i}: expected `{}` {}, got `{name}` {}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                ));
            }
        }
        for (dst, (_, t)) in self.tensors.iter_mut().zip(named) {
            *dst = t.clone();
        }
        Ok(())
    }

    /// Adds every tensor to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors
            .iter()
            .zip(self.ids())
            .map(|(t, id)| g.param(t.clone(), id))
            .collect()
    }

    /// Adds every tensor to `g` as a constant; no gradient will be reported for it.
    pub fn bind_detached(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Order-sensitive checksum of all parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}
