//! Real-time whole-body motion reconstruction from sparse inertial sensors and
//! contact insoles with an autoregressive inpainting diffusion model.

pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod kinematics;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
