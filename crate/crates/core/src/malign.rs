//! Motion alignment losses. Every map is compared after per-sample L2
//! normalization, so each term lies in [0, 4].
//!
//! All loss functions work on batches: feature maps and gradients are
//! `[B, C, T, H, W]` vars, motion targets come as an [`AlignedBatch`].

use mcl_autograd::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{MclError, Result};
use crate::motionfield::{l2_normalize_map, MotionVolume, NormalizedMap, EPSILON_NORM};
use crate::resample::area_weights;
use crate::validate::{Validate, Validator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MalVariant {
    /// Contrastive loss only.
    None,
    V1,
    V2,
    V3,
    Full,
}

impl MalVariant {
    pub fn needs_gradient(self) -> bool {
        matches!(self, Self::V2 | Self::V3 | Self::Full)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalConfig {
    pub variant: MalVariant,
    /// Differentiate through the similarity gradient (double backprop).
    pub second_order: bool,
    pub skip_zero_motion: bool,
    pub nce_weight: f64,
    pub mal_weight: f64,
}

impl Default for MalConfig {
    fn default() -> Self {
        Self { variant: MalVariant::Full, second_order: true, skip_zero_motion: true, nce_weight: 1.0, mal_weight: 1.0 }
    }
}

impl Validate for MalConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.nce_weight >= 0.0 && self.nce_weight.is_finite(), p, "nce_weight", "must be finite and >= 0");
        v.check(self.mal_weight >= 0.0 && self.mal_weight.is_finite(), p, "mal_weight", "must be finite and >= 0");
    }
}

/// Motion maps at feature resolution, each normalized on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedMotion {
    pub shape: (usize, usize, usize),
    /// `T'·H'·W'`, frame-major.
    pub m_st: NormalizedMap,
    /// `H'·W'`.
    pub m_s: NormalizedMap,
    /// `T'`.
    pub m_t: NormalizedMap,
}

impl AlignedMotion {
    pub fn is_zero(&self) -> bool {
        self.m_st.zero
    }
}

/// Coverage-weighted block average of the motion stack to `(t, h, w)`,
/// followed by temporal/spatial pooling and normalization.
pub fn resample_motion(volume: &MotionVolume, (t, h, w): (usize, usize, usize)) -> AlignedMotion {
    let (n, vh, vw) = (volume.frames(), volume.height(), volume.width());
    let (wt, wh, ww) = (area_weights(n, t), area_weights(vh, h), area_weights(vw, w));
    let mut st = vec![0.0f64; t * h * w];
    for (ti, tw) in wt.iter().enumerate() {
        for &(fi, a) in tw {
            let frame = volume.frame(fi);
            for (yi, yw) in wh.iter().enumerate() {
                for &(sy, b) in yw {
                    let row = &frame[sy * vw..(sy + 1) * vw];
                    let out = &mut st[(ti * h + yi) * w..(ti * h + yi + 1) * w];
                    for (xi, xw) in ww.iter().enumerate() {
                        let v: f64 = xw.iter().map(|&(sx, c)| c * row[sx] as f64).sum();
                        out[xi] += a * b * v;
                    }
                }
            }
        }
    }
    let hw = h * w;
    let mut s = vec![0.0; hw];
    let mut tp = vec![0.0; t];
    for (ti, frame) in st.chunks_exact(hw).enumerate() {
        for (acc, v) in s.iter_mut().zip(frame) {
            *acc += v / t as f64;
        }
        tp[ti] = frame.iter().sum::<f64>() / hw as f64;
    }
    AlignedMotion {
        shape: (t, h, w),
        m_st: l2_normalize_map(&st),
        m_s: l2_normalize_map(&s),
        m_t: l2_normalize_map(&tp),
    }
}

/// Stacked motion targets for a batch.
#[derive(Clone, Debug)]
pub struct AlignedBatch {
    pub shape: (usize, usize, usize),
    pub st: Tensor,
    pub s: Tensor,
    pub t: Tensor,
    pub st_zero: Vec<bool>,
    pub s_zero: Vec<bool>,
    pub t_zero: Vec<bool>,
}

impl AlignedBatch {
    pub fn new(items: &[AlignedMotion]) -> Result<Self> {
        let first = items.first().ok_or_else(|| MclError::Input("empty motion batch".into()))?;
        let shape = first.shape;
        if items.iter().any(|a| a.shape != shape) {
            return Err(MclError::Shape("motion targets differ in shape".into()));
        }
        let b = items.len();
        let (t, h, w) = shape;
        let stack = |f: &dyn Fn(&AlignedMotion) -> &NormalizedMap, n: usize| {
            let data: Vec<f64> = items.iter().flat_map(|a| f(a).values.iter().copied()).collect();
            let zero: Vec<bool> = items.iter().map(|a| f(a).zero).collect();
            (Tensor::new(&[b, n], data), zero)
        };
        let (st, st_zero) = stack(&|a| &a.m_st, t * h * w);
        let (s, s_zero) = stack(&|a| &a.m_s, h * w);
        let (tt, t_zero) = stack(&|a| &a.m_t, t);
        Ok(Self { shape, st, s, t: tt, st_zero, s_zero, t_zero })
    }

    pub fn len(&self) -> usize {
        self.st_zero.len()
    }

    pub fn is_empty(&self) -> bool {
        self.st_zero.is_empty()
    }
}

/// Row-wise L2 normalization of `[B, n]`; rows with norm ≤ [`EPSILON_NORM`]
/// become exact zeros and are flagged.
pub fn normalize_rows<'t>(x: Var<'t>) -> (Var<'t>, Vec<bool>) {
    let tape = x.tape();
    let b = x.shape()[0];
    let sq = x.square().sum_axes(&[1]);
    let norms = sq.value();
    let zero: Vec<bool> = norms.data().iter().map(|&v| !(v.sqrt() > EPSILON_NORM)).collect();
    // Flagged rows get denominator 1 and a zero mask, so no 0/0 reaches the tape.
    let pad = Tensor::from_fn(&[b, 1], |i| if zero[i] { 1.0 } else { 0.0 });
    let keep = Tensor::from_fn(&[b, 1], |i| if zero[i] { 0.0 } else { 1.0 });
    let denom = sq.add(tape.constant(pad)).sqrt();
    (x.div(denom).mul(tape.constant(keep)), zero)
}

/// Per-sample `‖a − m‖²` for `[B, n]` maps; returns the `[B]` values and
/// which samples were skipped (contribution forced to 0).
fn term<'t>(a: Var<'t>, a_zero: &[bool], m: &Tensor, m_zero: &[bool], skip_zero_motion: bool) -> (Var<'t>, Vec<bool>) {
    let tape = a.tape();
    let b = a.shape()[0];
    let skipped: Vec<bool> = (0..b).map(|i| a_zero[i] || (skip_zero_motion && m_zero[i])).collect();
    let mask = Tensor::from_fn(&[b, 1], |i| if skipped[i] { 0.0 } else { 1.0 });
    let d = a.sub(tape.constant(m.clone())).square().sum_axes(&[1]);
    (d.mul(tape.constant(mask)).reshape(&[b]), skipped)
}

/// A batch-mean MAL value with its bookkeeping.
pub struct MalOutput<'t> {
    /// Mean over the batch of the per-sample sums (skipped samples count 0).
    pub value: Var<'t>,
    pub per_sample: Vec<f64>,
    /// Named batch-mean components (`st`, `s`, `t`).
    pub components: Vec<(&'static str, f64)>,
    /// Samples with at least one skipped term.
    pub skipped: usize,
}

fn finish<'t>(terms: Vec<(&'static str, Var<'t>, Vec<bool>)>) -> MalOutput<'t> {
    let b = terms[0].1.shape()[0];
    let mut total = terms[0].1;
    for t in &terms[1..] {
        total = total.add(t.1);
    }
    let per_sample = total.value().data().to_vec();
    let components = terms.iter().map(|(n, v, _)| (*n, v.value().sum() / b as f64)).collect();
    let skipped = (0..b).filter(|&i| terms.iter().any(|t| t.2[i])).count();
    MalOutput { value: total.sum_all().scale(1.0 / b as f64), per_sample, components, skipped }
}

fn check_shape(x: &Var<'_>, motion: &AlignedBatch, what: &str) -> Result<(usize, usize)> {
    let s = x.shape();
    let (t, h, w) = motion.shape;
    if s.len() != 5 || s[2..] != [t, h, w] || s[0] != motion.len() {
        return Err(MclError::Shape(format!(
            "{what} {s:?} does not match motion batch of {} at {t}x{h}x{w}",
            motion.len()
        )));
    }
    Ok((s[0], t * h * w))
}

/// `∂(Σ_b q_b·k_b)/∂h`. With `second_order` the result stays on the graph.
pub fn similarity_gradient<'t>(
    tape: &'t Tape,
    q: Var<'t>,
    k: Var<'t>,
    features: Var<'t>,
    second_order: bool,
) -> Result<Var<'t>> {
    if !features.requires_grad() || !q.requires_grad() {
        return Err(MclError::State("feature map is detached from the similarity graph".into()));
    }
    let s = q.mul(k.detach()).sum_all();
    Ok(tape.grad(s, &[features], second_order).remove(0))
}

/// `‖⟨Σ_c h_c⟩ − ⟨m^ST⟩‖²`.
pub fn mal_v1<'t>(features: Var<'t>, motion: &AlignedBatch, skip_zero_motion: bool) -> Result<MalOutput<'t>> {
    let (b, n) = check_shape(&features, motion, "feature map")?;
    let (a, az) = normalize_rows(features.sum_axes(&[1]).reshape(&[b, n]));
    let (v, sk) = term(a, &az, &motion.st, &motion.st_zero, skip_zero_motion);
    Ok(finish(vec![("st", v, sk)]))
}

/// GradCAM channel weights: spatio-temporal mean of each gradient slice,
/// `[B, C, 1, 1, 1]`.
pub fn channel_weights<'t>(g: Var<'t>) -> Var<'t> {
    g.mean_axes(&[2, 3, 4])
}

/// `‖⟨ReLU(Σ_c w_c h_c)⟩ − ⟨m^ST⟩‖²`.
pub fn mal_v2<'t>(features: Var<'t>, g: Var<'t>, motion: &AlignedBatch, skip_zero_motion: bool) -> Result<MalOutput<'t>> {
    let (b, n) = check_shape(&features, motion, "feature map")?;
    check_shape(&g, motion, "gradient map")?;
    let cam = channel_weights(g).mul(features).sum_axes(&[1]).relu().reshape(&[b, n]);
    let (a, az) = normalize_rows(cam);
    let (v, sk) = term(a, &az, &motion.st, &motion.st_zero, skip_zero_motion);
    Ok(finish(vec![("st", v, sk)]))
}

/// Weighted gradient maps of a batch: `st` is `⟨ReLU(Σ_c w_c g_c)⟩` as
/// `[B, T'H'W']`; `s` and `t` are its re-normalized temporal and spatial
/// means, `[B, H'W']` and `[B, T']`.
pub struct GradientMaps<'t> {
    pub w: Var<'t>,
    pub st: Var<'t>,
    pub s: Var<'t>,
    pub t: Var<'t>,
    pub st_zero: Vec<bool>,
    pub s_zero: Vec<bool>,
    pub t_zero: Vec<bool>,
}

pub fn gradient_maps<'t>(g: Var<'t>) -> Result<GradientMaps<'t>> {
    let s = g.shape();
    if s.len() != 5 {
        return Err(MclError::Shape(format!("gradient map must be [B, C, T, H, W], got {s:?}")));
    }
    let (b, t, hw) = (s[0], s[2], s[3] * s[4]);
    let w = channel_weights(g);
    let raw = w.mul(g).sum_axes(&[1]).relu().reshape(&[b, t * hw]);
    let (st, st_zero) = normalize_rows(raw);
    let cube = st.reshape(&[b, t, hw]);
    let (sm, s_zero) = normalize_rows(cube.mean_axes(&[1]).reshape(&[b, hw]));
    let (tm, t_zero) = normalize_rows(cube.mean_axes(&[2]).reshape(&[b, t]));
    Ok(GradientMaps { w, st, s: sm, t: tm, st_zero, s_zero, t_zero })
}

/// `‖⟨ReLU(Σ_c w_c g_c)⟩ − ⟨m^ST⟩‖²`.
pub fn mal_v3<'t>(g: Var<'t>, motion: &AlignedBatch, skip_zero_motion: bool) -> Result<MalOutput<'t>> {
    check_shape(&g, motion, "gradient map")?;
    let maps = gradient_maps(g)?;
    let (v, sk) = term(maps.st, &maps.st_zero, &motion.st, &motion.st_zero, skip_zero_motion);
    Ok(finish(vec![("st", v, sk)]))
}

/// Sum of the S, T and ST alignment terms of the weighted gradient map.
pub fn mal_full<'t>(g: Var<'t>, motion: &AlignedBatch, skip_zero_motion: bool) -> Result<MalOutput<'t>> {
    check_shape(&g, motion, "gradient map")?;
    let maps = gradient_maps(g)?;
    let (vs, ss) = term(maps.s, &maps.s_zero, &motion.s, &motion.s_zero, skip_zero_motion);
    let (vt, stt) = term(maps.t, &maps.t_zero, &motion.t, &motion.t_zero, skip_zero_motion);
    let (vst, sst) = term(maps.st, &maps.st_zero, &motion.st, &motion.st_zero, skip_zero_motion);
    Ok(finish(vec![("s", vs, ss), ("t", vt, stt), ("st", vst, sst)]))
}

/// Dispatches on `cfg.variant`; `g` must be present for the gradient-based
/// variants. Returns `None` for [`MalVariant::None`].
pub fn mal_loss<'t>(
    cfg: &MalConfig,
    features: Var<'t>,
    g: Option<Var<'t>>,
    motion: &AlignedBatch,
) -> Result<Option<MalOutput<'t>>> {
    let need_g = || g.ok_or_else(|| MclError::State(format!("{:?} needs the similarity gradient", cfg.variant)));
    let skip = cfg.skip_zero_motion;
    Ok(Some(match cfg.variant {
        MalVariant::None => return Ok(None),
        MalVariant::V1 => mal_v1(features, motion, skip)?,
        MalVariant::V2 => mal_v2(features, need_g()?, motion, skip)?,
        MalVariant::V3 => mal_v3(need_g()?, motion, skip)?,
        MalVariant::Full => mal_full(need_g()?, motion, skip)?,
    }))
}

/// `nce_weight·L_NCE + mal_weight·L_MAL`, refusing non-finite inputs.
pub fn total_loss<'t>(nce: Var<'t>, mal: Option<Var<'t>>, cfg: &MalConfig) -> Result<Var<'t>> {
    let n = nce.item();
    let m = mal.map(|v| v.item());
    if !n.is_finite() || m.is_some_and(|m| !m.is_finite()) {
        return Err(MclError::Numeric(format!(
            "non-finite loss: nce = {n}, mal = {}",
            m.map_or("n/a".to_string(), |m| m.to_string())
        )));
    }
    let total = nce.scale(cfg.nce_weight);
    Ok(match mal {
        Some(m) => total.add(m.scale(cfg.mal_weight)),
        None => total,
    })
}
