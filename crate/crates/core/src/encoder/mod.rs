//! Small factorized (spatial 1×3×3, temporal 3×1×1) 3D-conv backbone and
//! projection head.

mod config;
mod model;

pub use config::{EncoderConfig, NormKind};
pub use model::{clip_batch, tubelet_batch, Encoder, Forward, Mode, NormStats, INPUT_MEAN, INPUT_STD};
