//! Satellite interference detection with a dual-domain reconstruction
//! network.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); training
//! and tests run at `f64`. The aliases below name the common instantiations.

pub mod error;
pub mod eval;
mod io;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod sim;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Model64 = model::DualAttWaveNet<f64>;
pub type Model32 = model::DualAttWaveNet<f32>;
pub type WaveletBank64 = wavelet::WaveletBank<f64>;
pub type WaveletBank32 = wavelet::WaveletBank<f32>;
pub type Checkpoint64 = model::checkpoint::Checkpoint<f64>;
pub type SplitInputs64 = sim::SplitInputs<f64>;
