//! Dense tensors, reverse-mode autodiff, and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, check_gradients_with, GradCheckReport, Stencil};
pub use graph::{broadcast_shape, Gradients, Graph, PointPlan, Var};
pub use tensor::{matmul, Tensor};
