use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AugmentConfig;
use crate::error::{MclError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipSpec {
    pub start_frame: usize,
    pub length: usize,
    pub stride: usize,
}

impl ClipSpec {
    pub fn frame_indices(&self) -> Vec<usize> {
        (0..self.length).map(|i| self.start_frame + i * self.stride).collect()
    }

    pub fn last_frame(&self) -> usize {
        self.start_frame + (self.length.max(1) - 1) * self.stride
    }

    pub fn check(&self, n_frames: usize) -> Result<()> {
        if self.length == 0 || self.stride == 0 || self.last_frame() >= n_frames {
            return Err(MclError::Input(format!("clip {self:?} does not fit {n_frames} frames")));
        }
        Ok(())
    }
}

/// Every clip start at hop spacing, ascending.
pub fn enumerate_candidates(n_frames: usize, cfg: &AugmentConfig) -> Result<Vec<ClipSpec>> {
    let span = cfg.clip_span();
    if n_frames < span {
        return Err(MclError::Input(format!("video has {n_frames} frames, one clip spans {span}")));
    }
    Ok((0..=n_frames - span)
        .step_by(cfg.hop())
        .map(|start_frame| ClipSpec { start_frame, length: cfg.clip_length, stride: cfg.clip_stride })
        .collect())
}

/// Mean of the T-motion over the clip's frames.
pub fn clip_motion_score(t_motion: &[f32], spec: &ClipSpec) -> f64 {
    let idx = spec.frame_indices();
    idx.iter().map(|&i| t_motion[i] as f64).sum::<f64>() / idx.len() as f64
}

/// Indices with score ≥ median. Decided on ranks rather than by comparing
/// against an interpolated median, so positive rescaling can never change
/// the outcome through rounding.
pub fn eligible_clips(scores: &[f64]) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    // Odd count: the median is sorted[n/2]. Even count: it lies in
    // [sorted[n/2 − 1], sorted[n/2]] and no score sits strictly inside, so
    // "≥ median" is "≥ sorted[n/2]" either way.
    let bar = sorted[n / 2];
    (0..n).filter(|&i| scores[i] >= bar).collect()
}

/// Uniform choice among clips scoring at least the median.
pub fn temporal_sample(candidates: &[ClipSpec], scores: &[f64], rng: &mut impl Rng) -> Result<ClipSpec> {
    if candidates.is_empty() || candidates.len() != scores.len() {
        return Err(MclError::Input(format!(
            "{} candidates with {} scores",
            candidates.len(),
            scores.len()
        )));
    }
    let eligible = eligible_clips(scores);
    Ok(candidates[eligible[rng.random_range(0..eligible.len())]])
}
