//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive applications in execution order; calling
//! [`Tape::backward`] on a scalar loss walks the record once in reverse and
//! accumulates gradients for every registered leaf. Tensors without a tape
//! node are constants: operations on constants stay off the tape, which is
//! how detached branches (e.g. the raw-FBP input image) cost nothing.
//!
//! Production code runs in `f32`; every kernel is generic over [`Scalar`] so
//! the test suite can re-verify each primitive in `f64`, where
//! finite-difference checks resolve far below float32 noise.

mod conv;
mod layout;
mod matmul;
mod ops;
mod tape;
mod tensor;

pub use tape::{GradStore, Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Element type of tensors: `f32` in production, `f64` in the high-precision
/// test mode.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
