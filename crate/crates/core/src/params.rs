//! Named parameter storage shared by layers, optimizers and checkpoints.
//!
//! Layers allocate their tensors here at construction and keep `ParamId`
//! handles; a forward pass registers the handles it uses on the graph, and
//! the optimizer walks the store entries. `decay` marks entries that receive
//! decoupled weight decay (weight matrices yes, biases and norm gains no).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        tensor.requires_grad = true;
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            decay,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Copy of the store with one scalar entry shifted by `delta`
    /// (finite-difference probes).
    pub fn with_perturbed(&self, id: ParamId, idx: usize, delta: f64) -> Result<ParamStore> {
        let mut copy = self.clone();
        let t = &mut copy.entries[id.0].tensor;
        if idx >= t.numel() {
            return Err(Error::InvalidArgument(format!(
                "perturb index {idx} out of range for parameter {}",
                self.entries[id.0].name
            )));
        }
        let mut values = t.values().to_vec();
        values[idx] += delta;
        let mut replacement = Tensor::new(t.shape().to_vec(), values)?;
        replacement.requires_grad = true;
        *t = replacement;
        Ok(copy)
    }
}
