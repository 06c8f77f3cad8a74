use mcl_autograd::{ConvGeometry, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderConfig, NormKind};
use crate::error::{MclError, Result};
use crate::motionfield::Frame;
use crate::sampler::Tubelet;
use crate::validate::Validate;

/// Per-channel input standardization applied to [0, 1] intensities.
pub const INPUT_MEAN: f64 = 0.45;
pub const INPUT_STD: f64 = 0.225;

const EMBED_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Factorized spatio-temporal conv backbone with a two-layer projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub param_names: Vec<String>,
    pub params: Vec<Tensor>,
    /// Running mean/var of every batch-norm layer (empty otherwise).
    pub buffer_names: Vec<String>,
    pub buffers: Vec<Tensor>,
}

/// Batch statistics gathered by a training-mode forward, one entry per norm
/// layer: (mean, biased variance, element count per channel).
#[derive(Clone, Debug, Default)]
pub struct NormStats(pub Vec<(Tensor, Tensor, usize)>);

pub struct Forward<'t> {
    /// Output of the last convolution, `[B, C', T', H', W']`.
    pub features: Var<'t>,
    /// Global average of the final activations, `[B, C']`.
    pub pooled: Var<'t>,
    /// Head output before normalization, `[B, d]`.
    pub projection: Var<'t>,
    /// Unit-norm embeddings, `[B, d]`.
    pub embedding: Var<'t>,
    pub stats: NormStats,
}

fn spatial_geom(stride: usize) -> ConvGeometry {
    ConvGeometry::new([1, stride, stride], [0, 1, 1])
}

fn temporal_geom(stride: usize) -> ConvGeometry {
    ConvGeometry::new([stride, 1, 1], [1, 0, 0])
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut buffer_names = Vec::new();
        let mut buffers = Vec::new();
        let mut normal = |shape: &[usize], std: f64| {
            let d = Normal::new(0.0, std).expect("positive std");
            Tensor::from_fn(shape, |_| d.sample(rng))
        };
        let mut c_in = config.in_channels;
        for (i, &c) in config.widths.iter().enumerate() {
            for (part, shape) in [("spatial", [c, c_in, 1, 3, 3]), ("temporal", [c, c, 3, 1, 1])] {
                let fan_in = shape[1] * shape[2] * shape[3] * shape[4];
                names.push(format!("stage{i}.{part}.weight"));
                params.push(normal(&shape, (2.0 / fan_in as f64).sqrt()));
                names.push(format!("stage{i}.{part}.norm.gamma"));
                params.push(Tensor::ones(&[c]));
                names.push(format!("stage{i}.{part}.norm.beta"));
                params.push(Tensor::zeros(&[c]));
                if config.norm == NormKind::Batch {
                    buffer_names.push(format!("stage{i}.{part}.norm.running_mean"));
                    buffers.push(Tensor::zeros(&[c]));
                    buffer_names.push(format!("stage{i}.{part}.norm.running_var"));
                    buffers.push(Tensor::ones(&[c]));
                }
            }
            c_in = c;
        }
        let (hid, d) = (config.head_hidden, config.embed_dim);
        names.push("head.fc1.weight".into());
        params.push(normal(&[c_in, hid], (2.0 / c_in as f64).sqrt()));
        names.push("head.fc1.bias".into());
        params.push(Tensor::zeros(&[1, hid]));
        names.push("head.fc2.weight".into());
        params.push(normal(&[hid, d], (1.0 / hid as f64).sqrt()));
        names.push("head.fc2.bias".into());
        params.push(Tensor::zeros(&[1, d]));
        Ok(Self { config, param_names: names, params, buffer_names, buffers })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Places the parameters on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn norm<'t>(
        &self,
        x: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        layer: usize,
        mode: Mode,
        stats: &mut NormStats,
    ) -> Var<'t> {
        let tape = x.tape();
        let shape = x.shape();
        let (b, c) = (shape[0], shape[1]);
        let eps = self.config.norm_eps;
        let affine = |y: Var<'t>| {
            y.mul(gamma.reshape(&[1, c, 1, 1, 1])).add(beta.reshape(&[1, c, 1, 1, 1]))
        };
        match self.config.norm {
            NormKind::Batch if mode == Mode::Eval => {
                let rm = self.buffers[2 * layer].clone().reshaped(&[1, c, 1, 1, 1]);
                let rv = self.buffers[2 * layer + 1].map(|v| 1.0 / (v + eps).sqrt()).reshaped(&[1, c, 1, 1, 1]);
                affine(x.sub(tape.constant(rm)).mul(tape.constant(rv)))
            }
            NormKind::Batch => {
                let axes = [0, 2, 3, 4];
                let mean = x.mean_axes(&axes);
                let centered = x.sub(mean);
                let var = centered.square().mean_axes(&axes);
                let n = x.value().numel() / c;
                stats.0.push((
                    mean.value().as_ref().clone().reshaped(&[c]),
                    var.value().as_ref().clone().reshaped(&[c]),
                    n,
                ));
                affine(centered.div(var.add_scalar(eps).sqrt()))
            }
            NormKind::Group { .. } | NormKind::Instance => {
                let groups = match self.config.norm {
                    NormKind::Group { groups } => groups,
                    _ => c,
                };
                let rest: usize = shape[2..].iter().product();
                let g = x.reshape(&[b, groups, c / groups * rest]);
                let mean = g.mean_axes(&[2]);
                let centered = g.sub(mean);
                let var = centered.square().mean_axes(&[2]);
                affine(centered.div(var.add_scalar(eps).sqrt()).reshape(&shape))
            }
        }
    }

    /// Runs the network on `x` (`[B, C, T, H, W]`, already standardized)
    /// with parameters `p` from [`Encoder::bind`]. The backbone is fully
    /// convolutional: any `T`, `H`, `W` divisible by the stride products is
    /// accepted, not only the configured training size.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>, mode: Mode) -> Result<Forward<'t>> {
        let cfg = &self.config;
        let shape = x.shape();
        let ts: usize = cfg.temporal_strides.iter().product();
        let ss: usize = cfg.spatial_strides.iter().product();
        if shape.len() != 5
            || shape[1] != cfg.in_channels
            || shape[0] == 0
            || shape[2..].contains(&0)
            || shape[2] % ts != 0
            || shape[3] % ss != 0
            || shape[4] % ss != 0
        {
            return Err(MclError::Input(format!(
                "encoder expects [B, {}, T, H, W] with T divisible by {ts} and H, W by {ss}; got {shape:?}",
                cfg.in_channels
            )));
        }
        if p.len() != self.params.len() {
            return Err(MclError::Input(format!("{} parameters bound, {} expected", p.len(), self.params.len())));
        }
        let mut stats = NormStats::default();
        let mut h = x;
        let mut features = None;
        let mut layer = 0;
        let stages = cfg.widths.len();
        for i in 0..stages {
            let base = i * 6;
            h = h.conv3d(p[base], spatial_geom(cfg.spatial_strides[i]));
            h = self.norm(h, p[base + 1], p[base + 2], layer, mode, &mut stats).relu();
            layer += 1;
            h = h.conv3d(p[base + 3], temporal_geom(cfg.temporal_strides[i]));
            if i + 1 == stages {
                features = Some(h);
            }
            h = self.norm(h, p[base + 4], p[base + 5], layer, mode, &mut stats).relu();
            layer += 1;
        }
        let b = shape[0];
        let c = *cfg.widths.last().unwrap();
        let pooled = h.mean_axes(&[2, 3, 4]).reshape(&[b, c]);
        let head = stages * 6;
        let z = pooled.matmul(p[head]).add(p[head + 1]).relu();
        let z = z.matmul(p[head + 2]).add(p[head + 3]);
        let norm = z.square().sum_axes(&[1]).add_scalar(EMBED_EPS).sqrt();
        let embedding = z.div(norm);
        Ok(Forward { features: features.expect("at least one stage"), pooled, projection: z, embedding, stats })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_stats(&mut self, stats: &NormStats) {
        if self.config.norm != NormKind::Batch {
            return;
        }
        let m = self.config.bn_momentum;
        for (layer, (mean, var, n)) in stats.0.iter().enumerate() {
            let unbias = if *n > 1 { *n as f64 / (*n - 1) as f64 } else { 1.0 };
            let rm = &self.buffers[2 * layer];
            self.buffers[2 * layer] = rm.zip_map(mean, |r, b| (1.0 - m) * r + m * b);
            let rv = &self.buffers[2 * layer + 1];
            self.buffers[2 * layer + 1] = rv.zip_map(var, |r, b| (1.0 - m) * r + m * b * unbias);
        }
    }

    /// Feature map and embedding of each tubelet, without a caller-visible
    /// tape. Training mode here normalizes with the batch's own statistics
    /// but leaves the running averages untouched.
    pub fn encode(&self, tubelets: &[&Tubelet], mode: Mode) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        tape.no_grad(|| {
            let p = self.bind(&tape, false);
            let x = tape.constant(tubelet_batch(tubelets, &self.config)?);
            let f = self.forward(&p, x, mode)?;
            Ok((f.features.value().as_ref().clone(), f.embedding.value().as_ref().clone()))
        })
    }

    /// Pooled pre-head features `[B, C']` of raw clips in eval mode.
    pub fn backbone_features(&self, clips: &[&[Frame]]) -> Result<Tensor> {
        let tape = Tape::new();
        tape.no_grad(|| {
            let p = self.bind(&tape, false);
            let x = tape.constant(clip_batch(clips, self.config.in_channels)?);
            Ok(self.forward(&p, x, Mode::Eval)?.pooled.value().as_ref().clone())
        })
    }
}

/// Stacks tubelets into a standardized `[B, C, T, H, W]` tensor; every
/// tubelet must match the configured input size.
pub fn tubelet_batch(tubelets: &[&Tubelet], cfg: &EncoderConfig) -> Result<Tensor> {
    let [_, t, h, w] = cfg.input_shape();
    for tb in tubelets {
        if tb.is_empty() || (tb.len(), tb.height(), tb.width()) != (t, h, w) {
            return Err(MclError::Input(format!(
                "tubelet {}x{}x{} does not match encoder input {t}x{h}x{w}",
                tb.len(),
                tb.frames.first().map_or(0, |f| f.height()),
                tb.frames.first().map_or(0, |f| f.width()),
            )));
        }
    }
    let clips: Vec<&[Frame]> = tubelets.iter().map(|tb| tb.frames.as_slice()).collect();
    clip_batch(&clips, cfg.in_channels)
}

/// Stacks equally sized clips into a standardized `[B, C, T, H, W]` tensor.
/// Gray clips are replicated across color channels.
pub fn clip_batch(clips: &[&[Frame]], channels: usize) -> Result<Tensor> {
    let first = clips.first().and_then(|c| c.first()).ok_or_else(|| MclError::Input("empty batch".into()))?;
    let (t, h, w) = (clips[0].len(), first.height(), first.width());
    let mut data = Vec::with_capacity(clips.len() * channels * t * h * w);
    for clip in clips {
        if clip.len() != t || clip.iter().any(|f| f.height() != h || f.width() != w) {
            return Err(MclError::Input(format!("clips in a batch must all be {t}x{h}x{w}")));
        }
        if let Some(f) = clip.iter().find(|f| f.channels() != channels && f.channels() != 1) {
            return Err(MclError::Input(format!("frame has {} channels, encoder expects {channels}", f.channels())));
        }
        for ch in 0..channels {
            for f in clip.iter() {
                let tc = f.channels();
                let src = if tc == 1 { 0 } else { ch };
                data.extend(f.data().iter().skip(src).step_by(tc).map(|&v| (v as f64 - INPUT_MEAN) / INPUT_STD));
            }
        }
    }
    Ok(Tensor::new(&[clips.len(), channels, t, h, w], data))
}
