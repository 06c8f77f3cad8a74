use mcl_autograd::Tape;

use crate::encoder::{clip_batch, Encoder, Mode};
use super::CropPolicy;
use crate::error::{MclError, Result};
use crate::motionfield::Frame;
use crate::resample::{bilinear_weights, resize_2d};
use crate::synthdata::GroundTruth;

/// Temporally pooled GradCAM map at feature resolution, min-max scaled to
/// [0, 1] (all zeros when the map is constant).
#[derive(Clone, Debug, PartialEq)]
pub struct Saliency {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// GradCAM of a single clip. The score is the self-similarity
/// `z · stopgrad(z / ‖z‖)` of the unnormalized projection `z`; the unit
/// embedding's own self-similarity is constant and has no gradient.
pub fn saliency(encoder: &Encoder, clip: &[Frame]) -> Result<Saliency> {
    let tape = Tape::new();
    let p = encoder.bind(&tape, true);
    let x = tape.constant(clip_batch(&[clip], encoder.config.in_channels)?);
    let f = encoder.forward(&p, x, Mode::Eval)?;
    let z = f.projection;
    let zn = z.value().as_ref().clone();
    let norm = zn.norm();
    if !(norm > 0.0) {
        return Err(MclError::Numeric("projection is zero; saliency undefined".into()));
    }
    let score = z.mul(tape.constant(zn.map(|v| v / norm))).sum_all();
    let g = tape.grad(score, &[f.features], false).remove(0).value();
    let h = f.features.value();
    let s = h.shape();
    let (c, t, hh, ww) = (s[1], s[2], s[3], s[4]);
    let cell = t * hh * ww;
    let (gd, hd) = (g.data(), h.data());
    let mut cam = vec![0.0; cell];
    for ch in 0..c {
        let gs = &gd[ch * cell..(ch + 1) * cell];
        let w = gs.iter().sum::<f64>() / cell as f64;
        for (acc, v) in cam.iter_mut().zip(&hd[ch * cell..(ch + 1) * cell]) {
            *acc += w * v;
        }
    }
    let mut pooled = vec![0.0; hh * ww];
    for frame in cam.chunks_exact(hh * ww) {
        for (acc, v) in pooled.iter_mut().zip(frame) {
            *acc += v.max(0.0) / t as f64;
        }
    }
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi - lo > 1e-12 {
        pooled.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; pooled.len()]
    };
    Ok(Saliency { height: hh, width: ww, values })
}

/// Bilinear upsampling to `height`×`width`.
pub fn upsample(s: &Saliency, height: usize, width: usize) -> Vec<f64> {
    let src: Vec<f32> = s.values.iter().map(|&v| v as f32).collect();
    let out = resize_2d(&src, s.height, s.width, 1, &bilinear_weights(s.height, height), &bilinear_weights(s.width, width));
    out.into_iter().map(|v| v as f64).collect()
}

/// Mean saliency inside `mask` over mean saliency outside it; `None` when
/// either region is empty.
pub fn mask_ratio(saliency: &[f64], mask: &[bool]) -> Option<f64> {
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &m) in saliency.iter().zip(mask) {
        if m {
            sin += s;
            nin += 1;
        } else {
            sout += s;
            nout += 1;
        }
    }
    if nin == 0 || nout == 0 {
        return None;
    }
    Some((sin / nin as f64) / (sout / nout as f64).max(1e-12))
}

/// Union of the object masks over the frames of a clip, cropped like the
/// evaluation clip: the region a temporally pooled map should light up.
pub fn clip_mask(gt: &GroundTruth, indices: &[usize], crop: CropPolicy) -> Result<Vec<bool>> {
    let first = gt.flow.flows.first().ok_or_else(|| MclError::Input("ground truth has no frames".into()))?;
    let (h, w) = (first.height(), first.width());
    let n = gt.mask.len() / (h * w);
    let (top, left, ch, cw) = match crop {
        CropPolicy::Full => (0, 0, h, w),
        CropPolicy::Center { size } => {
            let side = size.min(h).min(w);
            ((h - side) / 2, (w - side) / 2, side, side)
        }
    };
    let mut out = vec![false; ch * cw];
    for &i in indices {
        if i >= n {
            return Err(MclError::Input(format!("frame {i} out of range for a {n}-frame mask")));
        }
        let m = gt.mask_frame(i);
        for y in 0..ch {
            for x in 0..cw {
                out[y * cw + x] |= m[(top + y) * w + left + x];
            }
        }
    }
    Ok(out)
}

/// Half-transparent heat overlay (red = salient, blue = not) on `frame`.
pub fn overlay(frame: &Frame, s: &Saliency) -> Result<Frame> {
    let (h, w) = (frame.height(), frame.width());
    let up = upsample(s, h, w);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let a = up[y * w + x] as f32;
            let heat = [a, 0.2 * a, 1.0 - a];
            for (c, hv) in heat.iter().enumerate() {
                let base = frame.at(y, x, c.min(frame.channels() - 1));
                data.push((0.5 * base + 0.5 * hv).clamp(0.0, 1.0));
            }
        }
    }
    Frame::new(h, w, 3, data)
}
