//! Minimal reverse-mode differentiation engine: tensors, a recording
//! [`Graph`], 3D convolution, dense layers, activations, losses, Glorot
//! initialization and Adam.

mod adam;
mod conv;
mod gradcheck;
mod graph;
mod init;
mod ops;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use conv::Conv3dSpec;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_ERROR_FLOOR};
pub use graph::{Activation, Gradients, Graph, Var, BCE_EPS};
pub use init::{glorot_init, glorot_limit, glorot_uniform};
pub use ops::{bce_loss, conv3d_forward, dense_forward, masked_mse_loss, LossWithGrad};
pub use scalar::Scalar;
pub use tensor::{Param, ParamGrads, ParamId, ParamSet, Tensor};

