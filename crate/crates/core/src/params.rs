//! Named, ordered parameter storage shared by the model, the optimizer, and
//! checkpoint serialization.

use crate::error::{Error, Result};
use crate::grad::{Scalar, Tape, Tensor};
use rand::Rng;
use std::collections::HashMap;

pub type ParamId = usize;

/// Flat registry of trainable tensors. Iteration order is insertion order,
/// which fixes both the optimizer-state layout and the checkpoint record
/// order.
#[derive(Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let tensor = Tensor::param(shape, data)?;
        self.entries.push((name.clone(), tensor));
        let id = self.entries.len() - 1;
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Register the parameter on a tape and return the forward-pass handle.
    pub fn leaf(&self, tape: &mut Tape<T>, id: ParamId) -> Tensor<T> {
        tape.leaf(&self.entries[id].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Exact count of trainable scalars.
    pub fn total_parameters(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Xavier-uniform values for a weight with the given fan-in/out.
pub fn xavier<T: Scalar, R: Rng>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| T::from_f64(bound * (2.0 * rng.random::<f64>() - 1.0)))
        .collect()
}

pub fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::ZERO; n]
}
