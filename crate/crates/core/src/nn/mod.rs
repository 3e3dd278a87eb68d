//! Small reverse-mode neural network engine: layers with cached forward
//! passes and explicit backward passes, Adam, and gradient checking.

mod adam;
mod checkpoint;
pub(crate) mod gradcheck;
mod layers;
mod linalg;
mod loss;
mod network;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, FD_STEP};
pub use layers::{BatchNorm, Conv2d, Layer, LayerSpec, Linear, Mode, Residual};
pub use linalg::{gemm, Op};
pub use loss::{mse, softmax_cross_entropy, softmax_rows};
pub use network::{Network, NetworkSpec};
pub use param::Param;
pub use tensor::Tensor;
