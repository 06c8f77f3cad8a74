//! Motion-focused contrastive learning of video representations.
//!
//! Motion maps from TV-L1 optical flow steer both the choice of training
//! tubelets and an alignment loss between encoder gradient maps and motion.

pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod malign;
pub mod motionfield;
pub mod resample;
pub mod rng;
pub mod sampler;
pub mod synthdata;
pub mod train;
pub mod validate;

pub use error::{MclError, Result};
