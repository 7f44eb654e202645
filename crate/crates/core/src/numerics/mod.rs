//! Dense tensors, kernels and reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use kernels::{
    batched_matmul, conv1d, conv1d_transpose, l2_normalize, linear, mse, pad1d, softmax_rows,
    transpose_last, Conv1dSpec, PadMode,
};
pub use params::{Bound, Param, ParamId, ParamRegistry};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
