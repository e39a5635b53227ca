//! Minimal differentiable layers with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod norm;
pub mod optim;
mod scalar;
pub mod spiral;
pub mod tensor;

pub use activation::{elu, relu, sigmoid, softmax};
pub use conv::{Conv2d, MapShape};
pub use dense::Dense;
pub use gradcheck::finite_diff_check;
pub use norm::LayerNorm;
pub use optim::{AdamConfig, OptimizerState};
pub use scalar::Scalar;
pub use spiral::SpiralConv;
pub use tensor::{Params, Tensor};
