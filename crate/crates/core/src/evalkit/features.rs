use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{MclError, Result};
use crate::motionfield::Frame;
use crate::synthdata::{Dataset, Split};
use crate::validate::{Validate, Validator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CropPolicy {
    /// Whole frame at native resolution (the backbone is fully convolutional).
    Full,
    /// Centered square of side `size`.
    Center { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeProtocol {
    pub clips_per_video: usize,
    pub crop: CropPolicy,
    /// Full-batch gradient steps of the logistic regression.
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeProtocol {
    fn default() -> Self {
        Self { clips_per_video: 4, crop: CropPolicy::Full, epochs: 500, learning_rate: 0.5, l2: 1e-3, seed: 0 }
    }
}

impl ProbeProtocol {
    /// The published protocol: 20 clips per video.
    pub fn paper_scale() -> Self {
        Self { clips_per_video: 20, crop: CropPolicy::Center { size: 224 }, ..Self::default() }
    }
}

impl Validate for ProbeProtocol {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.clips_per_video >= 1, p, "clips_per_video", "must be at least 1");
        if let CropPolicy::Center { size } = self.crop {
            v.check(size >= 1, p, "crop.size", "must be at least 1");
        }
        v.check(self.epochs >= 1, p, "epochs", "must be at least 1");
        v.check(self.learning_rate > 0.0, p, "learning_rate", "must be positive");
        v.check(self.l2 >= 0.0, p, "l2", "must be non-negative");
    }
}

/// Frame indices of `count` uniformly spaced clips. A video shorter than
/// one clip yields a single clip whose indices repeat the last frame.
pub fn clip_indices(n_frames: usize, length: usize, stride: usize, count: usize) -> Vec<Vec<usize>> {
    let span = (length - 1) * stride + 1;
    if n_frames < span || count <= 1 {
        let start = n_frames.saturating_sub(span) / 2;
        return vec![(0..length).map(|i| (start + i * stride).min(n_frames - 1)).collect()];
    }
    let room = n_frames - span;
    (0..count)
        .map(|j| {
            let start = (j as f64 * room as f64 / (count - 1) as f64).round() as usize;
            (0..length).map(|i| start + i * stride).collect()
        })
        .collect()
}

/// The frames of one evaluation clip under `crop`.
pub fn eval_clip(video: &[Frame], indices: &[usize], crop: CropPolicy) -> Result<Vec<Frame>> {
    indices
        .iter()
        .map(|&i| {
            let f = video.get(i).ok_or_else(|| MclError::Input(format!("frame {i} out of range")))?;
            match crop {
                CropPolicy::Full => Ok(f.clone()),
                CropPolicy::Center { size } => {
                    let side = size.min(f.height()).min(f.width());
                    f.crop((f.height() - side) / 2, (f.width() - side) / 2, side, side)
                }
            }
        })
        .collect()
}

/// Mean of the backbone features of uniformly spaced clips.
pub fn extract_video_feature(
    encoder: &Encoder,
    video: &[Frame],
    clip_stride: usize,
    protocol: &ProbeProtocol,
) -> Result<Vec<f64>> {
    if video.is_empty() {
        return Err(MclError::Input("empty video".into()));
    }
    let length = encoder.config.input_frames;
    let clips = clip_indices(video.len(), length, clip_stride, protocol.clips_per_video)
        .iter()
        .map(|idx| eval_clip(video, idx, protocol.crop))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[Frame]> = clips.iter().map(Vec::as_slice).collect();
    let feats = encoder.backbone_features(&refs)?;
    let c = feats.shape()[1];
    let mut mean = vec![0.0; c];
    for row in feats.data().chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / clips.len() as f64;
        }
    }
    Ok(mean)
}

/// Features, labels and ids of every video in one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFeatures {
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
    pub features: Vec<Vec<f64>>,
}

pub fn extract_split(
    encoder: &Encoder,
    ds: &Dataset,
    split: Split,
    clip_stride: usize,
    protocol: &ProbeProtocol,
) -> Result<SplitFeatures> {
    let recs: Vec<_> = ds.records(split).collect();
    let features = recs
        .par_iter()
        .map(|r| extract_video_feature(encoder, &ds.load_video(r)?, clip_stride, protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitFeatures {
        ids: recs.iter().map(|r| r.video_id.clone()).collect(),
        labels: recs.iter().map(|r| r.label).collect(),
        features,
    })
}
