//! Motion-focused augmentation: high-motion clip choice, high-motion box
//! choice, and photometrically augmented tubelet view pairs.

mod clip;
mod config;
mod crop;
mod tubelet;

pub use clip::{clip_motion_score, eligible_clips, enumerate_candidates, temporal_sample, ClipSpec};
pub use config::{AugmentConfig, ColorJitter};
pub use crop::{coverage, hot_pixels, percentile, random_crop, spatial_crop, CropBox, CropChoice, MIN_BOX_SIDE};
pub use tubelet::{
    apply_photometric, extract_tubelet, mirror_tubelet, photometric_augment, resize_tubelet, sample_view_pair,
    PhotometricDraw, Tubelet,
};
