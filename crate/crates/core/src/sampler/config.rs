use serde::{Deserialize, Serialize};

use crate::validate::{is_prob, Validate, Validator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorJitter {
    /// Probability of applying the jitter at all.
    pub prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self { prob: 0.8, brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub clip_length: usize,
    pub clip_stride: usize,
    /// Spacing between candidate clip starts; `None` means a quarter span.
    pub clip_hop: Option<usize>,
    /// Output side of every tubelet frame.
    pub crop_size: usize,
    /// Box side is `crop_size` times a factor drawn from this range.
    pub scale_jitter: (f64, f64),
    pub percentile_q: f64,
    pub coverage_p: f64,
    pub candidate_box_attempts: usize,
    pub color_jitter: ColorJitter,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub mirror_prob: f64,
    /// Motion-guided clip choice (off: uniform among candidates).
    pub temporal_sampling: bool,
    /// Motion-guided box choice (off: uniform placement).
    pub spatial_cropping: bool,
    /// Both views share one clip instead of sampling independently.
    pub shared_clip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            clip_length: 16,
            clip_stride: 2,
            clip_hop: None,
            crop_size: 224,
            scale_jitter: (0.8, 1.25),
            percentile_q: 90.0,
            coverage_p: 0.8,
            candidate_box_attempts: 50,
            color_jitter: ColorJitter::default(),
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            mirror_prob: 0.5,
            temporal_sampling: true,
            spatial_cropping: true,
            shared_clip: false,
        }
    }
}

impl AugmentConfig {
    /// Frames covered by one clip, first to last inclusive.
    pub fn clip_span(&self) -> usize {
        (self.clip_length.max(1) - 1) * self.clip_stride + 1
    }

    pub fn hop(&self) -> usize {
        self.clip_hop.unwrap_or((self.clip_span() / 4).max(1))
    }

    /// Everything photometric disabled; only cropping and resizing remain.
    pub fn without_photometric(mut self) -> Self {
        self.color_jitter.prob = 0.0;
        self.grayscale_prob = 0.0;
        self.blur_prob = 0.0;
        self.mirror_prob = 0.0;
        self
    }
}

impl Validate for AugmentConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.clip_length >= 1, p, "clip_length", "must be at least 1");
        v.check(self.clip_stride >= 1, p, "clip_stride", "must be at least 1");
        v.check(self.clip_hop != Some(0), p, "clip_hop", "must be at least 1");
        v.check(self.crop_size >= 8, p, "crop_size", "must be at least 8");
        let (lo, hi) = self.scale_jitter;
        v.check(lo > 0.0 && lo <= hi && hi.is_finite(), p, "scale_jitter", "need 0 < low <= high");
        v.check(
            self.percentile_q > 0.0 && self.percentile_q < 100.0,
            p,
            "percentile_q",
            format!("must lie in (0, 100), got {}", self.percentile_q),
        );
        v.check(
            self.coverage_p > 0.0 && self.coverage_p <= 1.0,
            p,
            "coverage_p",
            format!("must lie in (0, 1], got {}", self.coverage_p),
        );
        v.check(self.candidate_box_attempts >= 1, p, "candidate_box_attempts", "must be at least 1");
        let cj = &self.color_jitter;
        v.check(is_prob(cj.prob), p, "color_jitter.prob", "must be a probability");
        v.check(
            [cj.brightness, cj.contrast, cj.saturation].iter().all(|&x| (0.0..1.0).contains(&x)),
            p,
            "color_jitter",
            "brightness/contrast/saturation must lie in [0, 1)",
        );
        v.check((0.0..=0.5).contains(&cj.hue), p, "color_jitter.hue", "must lie in [0, 0.5]");
        v.check(is_prob(self.grayscale_prob), p, "grayscale_prob", "must be a probability");
        v.check(is_prob(self.blur_prob), p, "blur_prob", "must be a probability");
        let (s0, s1) = self.blur_sigma;
        v.check(s0 > 0.0 && s0 <= s1, p, "blur_sigma", "need 0 < low <= high");
        v.check(is_prob(self.mirror_prob), p, "mirror_prob", "must be a probability");
    }
}
