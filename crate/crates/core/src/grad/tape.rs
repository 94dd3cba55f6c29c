//! The gradient tape: a record of primitive applications and the reverse
//! sweep over it.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use std::collections::HashMap;

pub type NodeId = usize;

type BackwardFn<T> = Box<dyn FnOnce(&[T], &mut GradStore<T>)>;

/// Per-node gradient buffers, indexed by [`NodeId`]. Accumulation is `+=`:
/// a node feeding several consumers receives the sum of their contributions.
pub struct GradStore<T: Scalar> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> GradStore<T> {
    fn new(n: usize) -> Self {
        GradStore {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    pub fn accumulate(&mut self, node: NodeId, grad: Vec<T>) {
        match &mut self.slots[node] {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len());
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn accumulate_slice(&mut self, node: NodeId, grad: &[T]) {
        match &mut self.slots[node] {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len());
                for (e, &g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    pub fn get(&self, node: NodeId) -> Option<&[T]> {
        self.slots.get(node).and_then(|s| s.as_deref())
    }
}

/// Records primitive applications in execution order. Recording order is a
/// topological order of the computation DAG, so one reverse pass visits each
/// node exactly once.
#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Option<BackwardFn<T>>>,
    leaves: HashMap<usize, NodeId>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Register a trainable tensor on this tape and return the handle to use
    /// in the forward pass. Registering the same buffer twice yields the
    /// same node, so gradients from every use accumulate together. Tensors
    /// that do not require gradients pass through untouched.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        if !t.requires_grad() {
            return t.clone();
        }
        let id = *self.leaves.entry(t.buffer_id()).or_insert_with(|| {
            self.nodes.push(None);
            self.nodes.len() - 1
        });
        t.clone().with_node(id)
    }

    /// Record a primitive with its backward rule. The closure receives the
    /// output cotangent and accumulates into the input nodes it captured.
    pub fn record(&mut self, backward: impl FnOnce(&[T], &mut GradStore<T>) + 'static) -> NodeId {
        self.nodes.push(Some(Box::new(backward)));
        self.nodes.len() - 1
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients for
    /// all leaves reached from the loss are returned (leaves not on the path
    /// report `None`).
    pub fn backward(mut self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut store = GradStore::new(self.nodes.len());
        let Some(root) = loss.node() else {
            // constant loss: nothing depends on any leaf
            return Ok(Gradients {
                store,
                leaves: self.leaves,
            });
        };
        store.accumulate(root, vec![T::ONE]);
        for i in (0..=root).rev() {
            if self.nodes[i].is_none() {
                continue; // leaf: keep its gradient for retrieval
            }
            let Some(grad) = store.slots[i].take() else {
                continue; // not on the path to the loss
            };
            let backward = self.nodes[i].take().expect("non-leaf node has a rule");
            backward(&grad, &mut store);
        }
        Ok(Gradients {
            store,
            leaves: self.leaves,
        })
    }
}

/// Result of a backward pass: leaf gradients addressable by the original
/// parameter tensors.
pub struct Gradients<T: Scalar> {
    store: GradStore<T>,
    leaves: HashMap<usize, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `param`, if the parameter
    /// participated in the forward pass.
    pub fn get(&self, param: &Tensor<T>) -> Option<&[T]> {
        let node = *self.leaves.get(&param.buffer_id())?;
        self.store.get(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f32>::new();
        let t = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(tape.backward(&t).is_err());
    }

    #[test]
    fn leaf_registration_is_idempotent() {
        let mut tape = Tape::<f32>::new();
        let p = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let a = tape.leaf(&p);
        let b = tape.leaf(&p);
        assert_eq!(a.node(), b.node());
        assert_eq!(tape.num_nodes(), 1);
    }

    #[test]
    fn constant_loss_yields_no_gradients() {
        let mut tape = Tape::<f32>::new();
        let p = Tensor::param(vec![1], vec![3.0]).unwrap();
        tape.leaf(&p);
        let loss = Tensor::scalar(5.0f32);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&p).is_none());
    }
}
