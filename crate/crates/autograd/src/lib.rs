//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The backward pass of every op is written in terms of other recorded ops,
//! so gradients can be differentiated again (double backprop). Convolution
//! is provided as a closed family of three bilinear ops: the forward
//! correlation and its two adjoints, each of whose derivatives is again a
//! member of the family.

pub mod check;
pub mod kernels;
mod tape;
mod tensor;

pub use kernels::ConvGeometry;
pub use tape::{Tape, Var};
pub use tensor::{numel, strides_of, Tensor};
