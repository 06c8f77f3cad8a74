use serde::{Deserialize, Serialize};

use crate::validate::{Validate, Validator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum NormKind {
    /// Per-batch statistics in training, running averages in eval.
    Batch,
    /// Per-sample statistics over channel groups (no cross-sample coupling).
    Group { groups: usize },
    Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub input_frames: usize,
    pub input_size: (usize, usize),
    pub widths: Vec<usize>,
    pub spatial_strides: Vec<usize>,
    pub temporal_strides: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub norm: NormKind,
    pub bn_momentum: f64,
    pub norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_frames: 8,
            input_size: (32, 32),
            widths: vec![8, 16, 32, 32],
            spatial_strides: vec![2, 2, 1, 1],
            temporal_strides: vec![1, 1, 2, 1],
            head_hidden: 64,
            embed_dim: 128,
            norm: NormKind::Batch,
            bn_momentum: 0.1,
            norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    /// R(2+1)D-50-sized record of the published setup; too large to train here.
    pub fn paper_scale() -> Self {
        Self {
            input_frames: 16,
            input_size: (224, 224),
            widths: vec![256, 512, 1024, 2048],
            spatial_strides: vec![4, 2, 2, 2],
            temporal_strides: vec![1, 2, 2, 2],
            head_hidden: 2048,
            embed_dim: 128,
            ..Self::default()
        }
    }

    /// `(C', T', H', W')` of the last feature map.
    pub fn feature_shape(&self) -> (usize, usize, usize, usize) {
        let t: usize = self.temporal_strides.iter().product();
        let s: usize = self.spatial_strides.iter().product();
        (
            *self.widths.last().unwrap_or(&0),
            self.input_frames.div_ceil(t.max(1)),
            self.input_size.0.div_ceil(s.max(1)),
            self.input_size.1.div_ceil(s.max(1)),
        )
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.in_channels, self.input_frames, self.input_size.0, self.input_size.1]
    }
}

impl Validate for EncoderConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.in_channels >= 1, p, "in_channels", "must be at least 1");
        v.check(self.input_frames >= 1, p, "input_frames", "must be at least 1");
        v.check(!self.widths.is_empty(), p, "widths", "need at least one stage");
        v.check(self.widths.iter().all(|&w| w >= 1), p, "widths", "every width must be at least 1");
        v.check(
            self.spatial_strides.len() == self.widths.len() && self.temporal_strides.len() == self.widths.len(),
            p,
            "spatial_strides",
            "need one spatial and one temporal stride per stage",
        );
        v.check(
            self.spatial_strides.iter().chain(&self.temporal_strides).all(|&s| s >= 1),
            p,
            "spatial_strides",
            "strides must be at least 1",
        );
        let t: usize = self.temporal_strides.iter().product();
        let s: usize = self.spatial_strides.iter().product();
        v.check(
            t >= 1 && self.input_frames % t == 0,
            p,
            "temporal_strides",
            format!("stride product {t} must divide input_frames {}", self.input_frames),
        );
        v.check(
            s >= 1 && self.input_size.0 % s == 0 && self.input_size.1 % s == 0,
            p,
            "spatial_strides",
            format!("stride product {s} must divide input_size {:?}", self.input_size),
        );
        v.check(self.head_hidden >= 1, p, "head_hidden", "must be at least 1");
        v.check(self.embed_dim >= 2, p, "embed_dim", "must be at least 2");
        if let NormKind::Group { groups } = self.norm {
            v.check(
                groups >= 1 && self.widths.iter().all(|w| w % groups == 0),
                p,
                "norm.groups",
                "must divide every stage width",
            );
        }
        v.check((0.0..=1.0).contains(&self.bn_momentum), p, "bn_momentum", "must lie in [0, 1]");
        v.check(self.norm_eps > 0.0, p, "norm_eps", "must be positive");
    }
}
