use rand::Rng;

use super::clip::{clip_motion_score, enumerate_candidates, temporal_sample, ClipSpec};
use super::crop::{random_crop, spatial_crop, CropBox};
use super::AugmentConfig;
use crate::error::{MclError, Result};
use crate::motionfield::{gaussian_blur, Frame, MotionVolume, Plane, LUMA_WEIGHTS};
use crate::resample::{area_weights, bilinear_weights, resize_2d};

/// Identically cropped frame patches over a clip, with their motion.
#[derive(Clone, Debug, PartialEq)]
pub struct Tubelet {
    pub video_id: String,
    pub spec: ClipSpec,
    pub crop: CropBox,
    pub frames: Vec<Frame>,
    /// Motion restricted to the crop; follows every geometric transform
    /// applied to `frames`.
    pub motion: MotionVolume,
    /// The crop came from the max-coverage fallback.
    pub fallback: bool,
    pub mirrored: bool,
}

impl Tubelet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }
}

/// Crops `crop` out of every clip frame and the matching motion sub-volume.
pub fn extract_tubelet(
    video_id: &str,
    video: &[Frame],
    spec: &ClipSpec,
    crop: &CropBox,
    volume: &MotionVolume,
) -> Result<Tubelet> {
    spec.check(video.len())?;
    if volume.frames() != video.len() {
        return Err(MclError::Shape(format!(
            "motion volume has {} frames, video {}",
            volume.frames(),
            video.len()
        )));
    }
    let (h, w) = (video[0].height(), video[0].width());
    if !crop.fits(h, w) || volume.height() != h || volume.width() != w {
        return Err(MclError::Input(format!("crop {crop:?} does not fit {h}x{w}")));
    }
    let idx = spec.frame_indices();
    let frames = idx
        .iter()
        .map(|&i| video[i].crop(crop.top, crop.left, crop.height, crop.width))
        .collect::<Result<Vec<_>>>()?;
    let motion = volume.crop(&idx, crop.top, crop.left, crop.height, crop.width)?;
    Ok(Tubelet {
        video_id: video_id.to_string(),
        spec: *spec,
        crop: *crop,
        frames,
        motion,
        fallback: false,
        mirrored: false,
    })
}

/// Resizes frames (bilinear) and motion (coverage-weighted area average) to
/// `size`×`size`. No-op at the same size.
pub fn resize_tubelet(t: &Tubelet, size: usize) -> Result<Tubelet> {
    let (h, w) = (t.height(), t.width());
    if h == size && w == size {
        return Ok(t.clone());
    }
    let (rows, cols) = (bilinear_weights(h, size), bilinear_weights(w, size));
    let frames = t
        .frames
        .iter()
        .map(|f| {
            let data = resize_2d(f.data(), h, w, f.channels(), &rows, &cols);
            Frame::from_raw(size, size, f.channels(), data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        })
        .collect();
    let (arows, acols) = (area_weights(h, size), area_weights(w, size));
    let mut st = Vec::with_capacity(t.len() * size * size);
    for i in 0..t.motion.frames() {
        st.extend(resize_2d(t.motion.frame(i), h, w, 1, &arows, &acols));
    }
    let motion = MotionVolume::from_st(t.motion.frames(), size, size, st)?;
    Ok(Tubelet { frames, motion, ..t.clone() })
}

/// Horizontal flip of frames and motion. An involution.
pub fn mirror_tubelet(t: &Tubelet) -> Tubelet {
    let (h, w) = (t.height(), t.width());
    let frames = t
        .frames
        .iter()
        .map(|f| {
            let c = f.channels();
            let mut data = Vec::with_capacity(f.data().len());
            for y in 0..h {
                for x in (0..w).rev() {
                    data.extend_from_slice(&f.data()[(y * w + x) * c..(y * w + x + 1) * c]);
                }
            }
            Frame::from_raw(h, w, c, data)
        })
        .collect();
    let mut st = Vec::with_capacity(t.motion.st().len());
    for i in 0..t.motion.frames() {
        let m = t.motion.frame(i);
        for y in 0..h {
            st.extend(m[y * w..(y + 1) * w].iter().rev());
        }
    }
    let motion = MotionVolume::from_st(t.motion.frames(), h, w, st).expect("flip keeps motion valid");
    Tubelet { frames, motion, mirrored: !t.mirrored, ..t.clone() }
}

/// Photometric parameters, drawn once per tubelet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricDraw {
    /// (brightness, contrast, saturation, hue) factors.
    pub jitter: Option<(f32, f32, f32, f32)>,
    pub grayscale: bool,
    pub blur_sigma: Option<f32>,
    pub mirror: bool,
}

impl PhotometricDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let cj = &cfg.color_jitter;
        let mut factor = |r: f64| if r > 0.0 { rng.random_range(1.0 - r..=1.0 + r) as f32 } else { 1.0 };
        let f = (factor(cj.brightness), factor(cj.contrast), factor(cj.saturation));
        let hue = if cj.hue > 0.0 { rng.random_range(-cj.hue..=cj.hue) as f32 } else { 0.0 };
        let jitter = rng.random_bool(cj.prob).then_some((f.0, f.1, f.2, hue));
        let grayscale = rng.random_bool(cfg.grayscale_prob);
        let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1) as f32;
        let blur_sigma = rng.random_bool(cfg.blur_prob).then_some(sigma);
        let mirror = rng.random_bool(cfg.mirror_prob);
        Self { jitter, grayscale, blur_sigma, mirror }
    }

    pub fn identity() -> Self {
        Self { jitter: None, grayscale: false, blur_sigma: None, mirror: false }
    }
}

fn luma(px: &[f32]) -> f32 {
    LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]
}

fn color_jitter(frames: &mut [Vec<f32>], channels: usize, (b, c, s, hue): (f32, f32, f32, f32)) {
    for f in frames.iter_mut() {
        f.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
    }
    // Contrast pivots on the tubelet's mean gray level so all frames move together.
    let (mut sum, mut n) = (0.0f64, 0usize);
    for f in frames.iter() {
        for px in f.chunks_exact(channels) {
            sum += if channels == 3 { luma(px) } else { px[0] } as f64;
            n += 1;
        }
    }
    let mean = (sum / n as f64) as f32;
    for f in frames.iter_mut() {
        f.iter_mut().for_each(|v| *v = ((*v - mean) * c + mean).clamp(0.0, 1.0));
    }
    if channels != 3 {
        return;
    }
    let (cos, sin) = ((std::f32::consts::TAU * hue).cos(), (std::f32::consts::TAU * hue).sin());
    for f in frames.iter_mut() {
        for px in f.chunks_exact_mut(3) {
            let g = luma(px);
            for v in px.iter_mut() {
                *v = ((*v - g) * s + g).clamp(0.0, 1.0);
            }
            if hue != 0.0 {
                // Rotate chroma in YIQ.
                let y = luma(px);
                let i = 0.596 * px[0] - 0.274 * px[1] - 0.322 * px[2];
                let q = 0.211 * px[0] - 0.523 * px[1] + 0.312 * px[2];
                let (i, q) = (i * cos - q * sin, i * sin + q * cos);
                px[0] = (y + 0.956 * i + 0.621 * q).clamp(0.0, 1.0);
                px[1] = (y - 0.272 * i - 0.647 * q).clamp(0.0, 1.0);
                px[2] = (y - 1.106 * i + 1.703 * q).clamp(0.0, 1.0);
            }
        }
    }
}

/// Applies one photometric draw to every frame (motion follows the mirror).
pub fn apply_photometric(t: &Tubelet, draw: &PhotometricDraw) -> Tubelet {
    let (h, w, ch) = (t.height(), t.width(), t.channels());
    let mut data: Vec<Vec<f32>> = t.frames.iter().map(|f| f.data().to_vec()).collect();
    if let Some(j) = draw.jitter {
        color_jitter(&mut data, ch, j);
    }
    if draw.grayscale && ch == 3 {
        for f in data.iter_mut() {
            for px in f.chunks_exact_mut(3) {
                let g = luma(px).clamp(0.0, 1.0);
                px.fill(g);
            }
        }
    }
    if let Some(sigma) = draw.blur_sigma {
        for f in data.iter_mut() {
            for c in 0..ch {
                let plane = Plane::from_fn(h, w, |y, x| f[(y * w + x) * ch + c]);
                let blurred = gaussian_blur(&plane, sigma);
                for (k, v) in blurred.data.iter().enumerate() {
                    f[k * ch + c] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    let frames = data.into_iter().map(|d| Frame::from_raw(h, w, ch, d)).collect();
    let out = Tubelet { frames, ..t.clone() };
    if draw.mirror {
        mirror_tubelet(&out)
    } else {
        out
    }
}

/// Resize to `crop_size`, then one photometric draw applied to all frames.
pub fn photometric_augment(t: &Tubelet, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tubelet> {
    let resized = resize_tubelet(t, cfg.crop_size)?;
    let draw = PhotometricDraw::sample(cfg, rng);
    Ok(apply_photometric(&resized, &draw))
}

/// Clip choice for one view: motion-guided or uniform.
fn pick_clip(cands: &[ClipSpec], scores: &[f64], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<ClipSpec> {
    if cfg.temporal_sampling {
        temporal_sample(cands, scores, rng)
    } else {
        Ok(cands[rng.random_range(0..cands.len())])
    }
}

fn one_view(
    video_id: &str,
    video: &[Frame],
    volume: &MotionVolume,
    clip: ClipSpec,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Tubelet> {
    let (h, w) = (volume.height(), volume.width());
    let (crop, fallback) = if cfg.spatial_cropping {
        let clip_motion = volume.crop(&clip.frame_indices(), 0, 0, h, w)?;
        let choice = spatial_crop(clip_motion.s(), cfg, rng)?;
        (choice.crop, choice.fallback)
    } else {
        (random_crop(h, w, cfg, rng)?, false)
    };
    let mut t = extract_tubelet(video_id, video, &clip, &crop, volume)?;
    t.fallback = fallback;
    photometric_augment(&t, cfg, rng)
}

/// Two independently sampled, augmented views of one video.
pub fn sample_view_pair(
    video_id: &str,
    video: &[Frame],
    volume: &MotionVolume,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Tubelet, Tubelet)> {
    let cands = enumerate_candidates(video.len(), cfg)?;
    let scores: Vec<f64> = cands.iter().map(|c| clip_motion_score(volume.t(), c)).collect();
    let c1 = pick_clip(&cands, &scores, cfg, rng)?;
    let c2 = if cfg.shared_clip { c1 } else { pick_clip(&cands, &scores, cfg, rng)? };
    let a = one_view(video_id, video, volume, c1, cfg, rng)?;
    let b = one_view(video_id, video, volume, c2, cfg, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Tubelet {
        let frames: Vec<Frame> = (0..3)
            .map(|i| Frame::from_fn(8, 8, 3, |y, x, c| ((i + y * 8 + x + c) % 11) as f32 / 10.0).unwrap())
            .collect();
        let st: Vec<f32> = (0..3 * 64).map(|k| (k % 7) as f32).collect();
        let motion = MotionVolume::from_st(3, 8, 8, st).unwrap();
        extract_tubelet("v", &frames, &ClipSpec { start_frame: 0, length: 3, stride: 1 }, &CropBox::full(8, 8), &motion)
            .unwrap()
    }

    #[test]
    fn mirror_is_an_involution_and_moves_motion() {
        let t = tiny();
        let m = mirror_tubelet(&t);
        assert_eq!(m.frames[1].at(2, 0, 1), t.frames[1].at(2, 7, 1));
        assert_eq!(m.motion.frame(2)[3 * 8], t.motion.frame(2)[3 * 8 + 7]);
        let back = mirror_tubelet(&m);
        assert_eq!(back.frames, t.frames);
        assert_eq!(back.motion, t.motion);
    }

    #[test]
    fn identity_draw_keeps_tubelet() {
        let t = tiny();
        assert_eq!(apply_photometric(&t, &PhotometricDraw::identity()), t);
    }
}
