//! Differentiable sparse-view CT reconstruction at desk scale.
//!
//! The crate is organized around the DuDoTrans pipeline: fan-beam tomography
//! operators with exact adjoints ([`tomo`]), a minimal reverse-mode autodiff
//! engine over dense tensors ([`grad`]), shifted-window attention blocks
//! ([`swin`]), the dual-domain model itself ([`model`]), data simulation
//! ([`simulate`]), Adam training ([`train`]), and image-quality metrics
//! ([`metrics`]).

pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod grad;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod simulate;
pub mod swin;
pub mod tomo;
pub mod train;

pub use error::{Error, Result};
