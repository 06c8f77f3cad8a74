use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AugmentConfig;
use crate::error::{MclError, Result};
use crate::motionfield::Plane;

pub const MIN_BOX_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self { top: 0, left: 0, height, width }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height >= 1 && self.width >= 1 && self.top + self.height <= height && self.left + self.width <= width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropChoice {
    pub crop: CropBox,
    /// No sampled box reached the coverage target; `crop` has the best
    /// coverage seen.
    pub fallback: bool,
    pub threshold: f64,
    pub hot_pixels: usize,
    pub covered: usize,
}

/// Linear-interpolation percentile of all values, `q` in (0, 100).
pub fn percentile(values: &[f32], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if f == 0.0 || i + 1 >= sorted.len() {
        sorted[i]
    } else {
        sorted[i] + (sorted[i + 1] - sorted[i]) * f
    }
}

/// Pixels strictly above the `q`-th percentile, as a row-major mask.
///
/// Decided on ranks: when the percentile falls strictly between two
/// neighbouring order statistics the set is "≥ the upper one", otherwise
/// "> the hit value". Equivalent to comparing against the interpolated
/// threshold, but immune to rounding under rescaling.
pub fn hot_pixels(map: &[f32], q: f64) -> Vec<bool> {
    let mut sorted = map.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let strictly_between = pos > i as f64 && i + 1 < sorted.len() && sorted[i + 1] > sorted[i];
    if strictly_between {
        let upper = sorted[i + 1];
        map.iter().map(|&v| v >= upper).collect()
    } else {
        let hit = sorted[i];
        map.iter().map(|&v| v > hit).collect()
    }
}

/// Summed-area table for O(1) box counts.
struct Integral {
    width: usize,
    table: Vec<u32>,
}

impl Integral {
    fn new(mask: &[bool], height: usize, width: usize) -> Self {
        let w1 = width + 1;
        let mut table = vec![0u32; (height + 1) * w1];
        for y in 0..height {
            let mut row = 0;
            for x in 0..width {
                row += mask[y * width + x] as u32;
                table[(y + 1) * w1 + x + 1] = table[y * w1 + x + 1] + row;
            }
        }
        Self { width, table }
    }

    fn count(&self, b: &CropBox) -> usize {
        let w1 = self.width + 1;
        let (y0, x0, y1, x1) = (b.top, b.left, b.top + b.height, b.left + b.width);
        (self.table[y1 * w1 + x1] + self.table[y0 * w1 + x0] - self.table[y0 * w1 + x1] - self.table[y1 * w1 + x0])
            as usize
    }
}

/// Number of `mask` pixels inside `b`.
pub fn coverage(mask: &[bool], width: usize, b: &CropBox) -> usize {
    (b.top..b.top + b.height)
        .map(|y| mask[y * width + b.left..y * width + b.left + b.width].iter().filter(|&&m| m).count())
        .sum()
}

/// Side of a jittered square box.
fn box_side(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut impl Rng) -> usize {
    let (lo, hi) = cfg.scale_jitter;
    let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    ((cfg.crop_size as f64 * s).round() as usize).clamp(MIN_BOX_SIDE, height.min(width))
}

fn check_crop(cfg: &AugmentConfig, height: usize, width: usize) -> Result<()> {
    if cfg.crop_size > height || cfg.crop_size > width {
        return Err(MclError::Config(format!(
            "crop size {} exceeds the {height}x{width} frame",
            cfg.crop_size
        )));
    }
    Ok(())
}

/// Uniformly placed jittered box, no motion guidance.
pub fn random_crop(height: usize, width: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<CropBox> {
    check_crop(cfg, height, width)?;
    let side = box_side(cfg, height, width, rng);
    Ok(CropBox {
        top: rng.random_range(0..=height - side),
        left: rng.random_range(0..=width - side),
        height: side,
        width: side,
    })
}

/// Motion-guided crop: among `candidate_box_attempts` jittered boxes, a
/// uniformly chosen one covering at least `coverage_p` of the pixels above the
/// `percentile_q` threshold; if none does, the best-covering box with the
/// fallback flag set.
///
/// Proposals are anchored on a random hot pixel (uniform placement among the
/// positions containing it) so small moving regions are found within the
/// attempt budget; with no hot pixels placement is uniform.
pub fn spatial_crop(s_motion: &Plane, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<CropChoice> {
    let (h, w) = (s_motion.height, s_motion.width);
    check_crop(cfg, h, w)?;
    if !s_motion.data.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(MclError::Input("S-motion map must be finite and nonnegative".into()));
    }
    let threshold = percentile(&s_motion.data, cfg.percentile_q);
    let hot = hot_pixels(&s_motion.data, cfg.percentile_q);
    let hot_idx: Vec<usize> = (0..hot.len()).filter(|&i| hot[i]).collect();
    let need = cfg.coverage_p * hot_idx.len() as f64;
    let integral = Integral::new(&hot, h, w);

    let mut qualifying = Vec::new();
    let mut best: Option<(usize, CropBox)> = None;
    for _ in 0..cfg.candidate_box_attempts {
        let side = box_side(cfg, h, w, rng);
        let (top, left) = if hot_idx.is_empty() {
            (rng.random_range(0..=h - side), rng.random_range(0..=w - side))
        } else {
            let a = hot_idx[rng.random_range(0..hot_idx.len())];
            let (ay, ax) = (a / w, a % w);
            let place = |anchor: usize, len: usize| -> (usize, usize) {
                (anchor.saturating_sub(side - 1), anchor.min(len - side))
            };
            let (ty0, ty1) = place(ay, h);
            let (tx0, tx1) = place(ax, w);
            (rng.random_range(ty0..=ty1), rng.random_range(tx0..=tx1))
        };
        let b = CropBox { top, left, height: side, width: side };
        let c = integral.count(&b);
        if c as f64 >= need {
            qualifying.push((c, b));
        }
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, b));
        }
    }
    let hot_pixels = hot_idx.len();
    if qualifying.is_empty() {
        let (covered, crop) = best.expect("at least one attempt");
        return Ok(CropChoice { crop, fallback: true, threshold, hot_pixels, covered });
    }
    let (covered, crop) = qualifying[rng.random_range(0..qualifying.len())];
    Ok(CropChoice { crop, fallback: false, threshold, hot_pixels, covered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f32> = (0..11).map(|x| x as f32).collect();
        assert_eq!(percentile(&v, 90.0), 9.0);
        assert!((percentile(&[0.0, 10.0], 25.0) - 2.5).abs() < 1e-12);
        let hot = hot_pixels(&v, 90.0);
        assert_eq!(hot.iter().filter(|&&h| h).count(), 1);
        // Threshold 2.5 between 0 and 10: only the 10 is hot.
        assert_eq!(hot_pixels(&[0.0, 10.0], 25.0), vec![false, true]);
    }

    #[test]
    fn integral_counts_match_brute_force() {
        let mask: Vec<bool> = (0..7 * 9).map(|i| (i * 7 + i / 5) % 3 == 0).collect();
        let it = Integral::new(&mask, 7, 9);
        for top in 0..7 {
            for left in 0..9 {
                for hh in 1..=7 - top {
                    let b = CropBox { top, left, height: hh, width: (9 - left).min(3) };
                    assert_eq!(it.count(&b), coverage(&mask, 9, &b));
                }
            }
        }
    }
}
