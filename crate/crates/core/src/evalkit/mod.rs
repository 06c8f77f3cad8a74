//! Frozen-feature evaluation: linear probe, nearest-neighbour retrieval and
//! GradCAM saliency.

mod features;
mod probe;
mod retrieval;
mod saliency;

pub use features::{clip_indices, eval_clip, extract_split, extract_video_feature, CropPolicy, ProbeProtocol, SplitFeatures};
pub use probe::{linear_probe, LinearProbe};
pub use retrieval::{rank_neighbours, retrieval, RetrievalResult, DEFAULT_KS};
pub use saliency::{clip_mask, mask_ratio, overlay, saliency, upsample, Saliency};
