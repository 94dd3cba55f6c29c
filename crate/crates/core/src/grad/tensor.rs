//! The dense tensor handle.

use super::{NodeId, Scalar};
use crate::error::{Error, Result};
use std::sync::Arc;

/// An n-dimensional real array, row-major, optionally participating in a
/// gradient tape.
///
/// Data is shared behind an [`Arc`]; clones are cheap and backward closures
/// hold the values they need without copying.
#[derive(Debug, Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeId>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
            requires_grad: false,
        })
    }

    /// A trainable leaf; call [`super::Tape::leaf`] to register it on a tape.
    pub fn param(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![T::ZERO; numel]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; numel]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(vec![1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    /// Identity of the underlying buffer; used to match leaves to gradients.
    pub fn buffer_id(&self) -> usize {
        Arc::as_ptr(&self.data) as *const u8 as usize
    }

    /// Mutable access to the values, copying only if the buffer is shared.
    /// Detaches the tensor from any tape node, since its value changes.
    pub fn data_mut(&mut self) -> &mut Vec<T> {
        self.node = None;
        Arc::make_mut(&mut self.data)
    }

    /// Reinterpret the flat data under a new shape. Shares the buffer and
    /// the tape node: a reshape is the identity on flat data, so gradients
    /// flow through unchanged.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
            node: self.node,
            requires_grad: self.requires_grad,
        })
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<T>>, node: Option<NodeId>) -> Self {
        Tensor {
            shape,
            data,
            node,
            requires_grad: false,
        }
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }
}
