//! Coarse-to-fine TV-L1 optical flow with the primal-dual (Chambolle)
//! scheme: per pyramid level, repeated warping around the current estimate,
//! each warp followed by alternating pointwise thresholding of the
//! linearised data term and a dual projection step for the TV term.

use serde::{Deserialize, Serialize};

use super::flow::FlowPair;
use super::frame::{Frame, Plane};
use crate::error::{MclError, Result};

/// Intensities are scaled to this range before solving; `lambda_data` is
/// calibrated for 8-bit-range images.
const INTENSITY_SCALE: f32 = 255.0;
const PRESMOOTH_SIGMA: f32 = 0.8;
const GRAD_IS_ZERO: f32 = 1e-10;
/// Smallest side allowed at the coarsest pyramid level.
pub const MIN_LEVEL_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tvl1Params {
    pub lambda_data: f32,
    pub theta: f32,
    pub tau_step: f32,
    pub pyramid_levels: usize,
    pub pyramid_scale: f32,
    pub warps_per_level: usize,
    pub inner_iterations: usize,
    pub stop_epsilon: f32,
}

impl Default for Tvl1Params {
    fn default() -> Self {
        Self {
            lambda_data: 0.15,
            theta: 0.3,
            tau_step: 0.25,
            pyramid_levels: 5,
            pyramid_scale: 0.5,
            warps_per_level: 5,
            inner_iterations: 10,
            stop_epsilon: 0.01,
        }
    }
}

impl Tvl1Params {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_data", self.lambda_data),
            ("theta", self.theta),
            ("tau_step", self.tau_step),
            ("stop_epsilon", self.stop_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MclError::Config(format!("tvl1 {name} must be positive, got {v}")));
            }
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(MclError::Config(format!(
                "tvl1 pyramid_scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.pyramid_levels == 0 || self.warps_per_level == 0 || self.inner_iterations == 0 {
            return Err(MclError::Config(
                "tvl1 pyramid_levels, warps_per_level and inner_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Level sizes from finest to coarsest for a `height`×`width` input.
    pub fn pyramid_sizes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let mut sizes = vec![(height, width)];
        for level in 1..self.pyramid_levels {
            let f = self.pyramid_scale.powi(level as i32);
            let h = (height as f32 * f + 0.5) as usize;
            let w = (width as f32 * f + 0.5) as usize;
            sizes.push((h, w));
        }
        let &(h, w) = sizes.last().expect("at least one level");
        if h < MIN_LEVEL_SIDE || w < MIN_LEVEL_SIDE {
            return Err(MclError::Config(format!(
                "frame {height}x{width} is too small for {} pyramid levels at scale {} \
                 (coarsest level {h}x{w}, minimum {MIN_LEVEL_SIDE})",
                self.pyramid_levels, self.pyramid_scale
            )));
        }
        Ok(sizes)
    }
}

/// TV-L1 objective per finest-level warp, recorded by [`tvl1_flow_traced`].
#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    pub finest_level_energy: Vec<f64>,
}

/// Dense flow mapping `prev` to `next`: `next(x + w(x)) ≈ prev(x)`.
pub fn tvl1_flow(prev: &Frame, next: &Frame, params: &Tvl1Params) -> Result<FlowPair> {
    solve(prev, next, params, None)
}

/// [`tvl1_flow`] that also records the objective after every warp at the
/// finest level.
pub fn tvl1_flow_traced(prev: &Frame, next: &Frame, params: &Tvl1Params) -> Result<(FlowPair, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let flow = solve(prev, next, params, Some(&mut trace))?;
    Ok((flow, trace))
}

fn solve(prev: &Frame, next: &Frame, params: &Tvl1Params, mut trace: Option<&mut SolverTrace>) -> Result<FlowPair> {
    if prev.height() != next.height() || prev.width() != next.width() {
        return Err(MclError::Shape(format!(
            "tvl1 frames differ: {}x{} vs {}x{}",
            prev.height(),
            prev.width(),
            next.height(),
            next.width()
        )));
    }
    params.validate()?;
    let sizes = params.pyramid_sizes(prev.height(), prev.width())?;

    let prepare = |f: &Frame| {
        let mut lum = f.luminance();
        lum.data.iter_mut().for_each(|v| *v *= INTENSITY_SCALE);
        gaussian_blur(&lum, PRESMOOTH_SIGMA)
    };
    let mut pyr0 = vec![prepare(prev)];
    let mut pyr1 = vec![prepare(next)];
    for &(h, w) in &sizes[1..] {
        let p0 = pyr0.last().unwrap();
        let p1 = pyr1.last().unwrap();
        let scale = h as f32 / p0.height as f32;
        pyr0.push(zoom_out(p0, h, w, scale));
        pyr1.push(zoom_out(p1, h, w, scale));
    }

    let (ch, cw) = *sizes.last().unwrap();
    let mut u1 = Plane::zeros(ch, cw);
    let mut u2 = Plane::zeros(ch, cw);
    for level in (0..sizes.len()).rev() {
        let (h, w) = sizes[level];
        if u1.height != h || u1.width != w {
            u1 = zoom_in_flow(&u1, h, w, w as f32 / u1.width as f32);
            u2 = zoom_in_flow(&u2, h, w, h as f32 / u2.height as f32);
        }
        let energies = if level == 0 { trace.as_deref_mut() } else { None };
        solve_level(&pyr0[level], &pyr1[level], &mut u1, &mut u2, params, energies);
    }
    Ok(FlowPair { u: u1, v: u2 })
}

fn solve_level(
    i0: &Plane,
    i1: &Plane,
    u1: &mut Plane,
    u2: &mut Plane,
    params: &Tvl1Params,
    mut trace: Option<&mut SolverTrace>,
) {
    let (h, w) = (i0.height, i0.width);
    let n = h * w;
    let (i1x, i1y) = centered_gradient(i1);
    let mut p11 = vec![0.0f32; n];
    let mut p12 = vec![0.0f32; n];
    let mut p21 = vec![0.0f32; n];
    let mut p22 = vec![0.0f32; n];
    let mut v1 = vec![0.0f32; n];
    let mut v2 = vec![0.0f32; n];
    let mut div1 = vec![0.0f32; n];
    let mut div2 = vec![0.0f32; n];
    let mut gx = vec![0.0f32; n];
    let mut gy = vec![0.0f32; n];

    let lt = params.lambda_data * params.theta;
    let taut = params.tau_step / params.theta;
    let eps2 = params.stop_epsilon * params.stop_epsilon;

    for _warp in 0..params.warps_per_level {
        let i1w = warp(i1, u1, u2);
        let i1wx = warp(&i1x, u1, u2);
        let i1wy = warp(&i1y, u1, u2);
        let grad: Vec<f32> = (0..n).map(|k| i1wx.data[k].powi(2) + i1wy.data[k].powi(2)).collect();
        let rho_c: Vec<f32> = (0..n)
            .map(|k| i1w.data[k] - i1wx.data[k] * u1.data[k] - i1wy.data[k] * u2.data[k] - i0.data[k])
            .collect();

        let mut iteration = 0;
        let mut error = f32::INFINITY;
        while error > eps2 && iteration < params.inner_iterations {
            iteration += 1;
            for k in 0..n {
                let rho = rho_c[k] + i1wx.data[k] * u1.data[k] + i1wy.data[k] * u2.data[k];
                let (d1, d2) = if rho < -lt * grad[k] {
                    (lt * i1wx.data[k], lt * i1wy.data[k])
                } else if rho > lt * grad[k] {
                    (-lt * i1wx.data[k], -lt * i1wy.data[k])
                } else if grad[k] < GRAD_IS_ZERO {
                    (0.0, 0.0)
                } else {
                    let fi = -rho / grad[k];
                    (fi * i1wx.data[k], fi * i1wy.data[k])
                };
                v1[k] = u1.data[k] + d1;
                v2[k] = u2.data[k] + d2;
            }

            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            let mut err_sum = 0.0f64;
            for k in 0..n {
                let a = v1[k] + params.theta * div1[k];
                let b = v2[k] + params.theta * div2[k];
                err_sum += ((a - u1.data[k]).powi(2) + (b - u2.data[k]).powi(2)) as f64;
                u1.data[k] = a;
                u2.data[k] = b;
            }
            error = (err_sum / n as f64) as f32;

            forward_gradient(&u1.data, w, h, &mut gx, &mut gy);
            for k in 0..n {
                let ng = 1.0 + taut * gx[k].hypot(gy[k]);
                p11[k] = (p11[k] + taut * gx[k]) / ng;
                p12[k] = (p12[k] + taut * gy[k]) / ng;
            }
            forward_gradient(&u2.data, w, h, &mut gx, &mut gy);
            for k in 0..n {
                let ng = 1.0 + taut * gx[k].hypot(gy[k]);
                p21[k] = (p21[k] + taut * gx[k]) / ng;
                p22[k] = (p22[k] + taut * gy[k]) / ng;
            }
        }

        if let Some(t) = trace.as_deref_mut() {
            t.finest_level_energy.push(energy(i0, i1, u1, u2, params.lambda_data));
        }
    }
}

/// TV-L1 objective `Σ |∇u1| + |∇u2| + λ |I1(x + u) − I0(x)|` on one level.
pub fn energy(i0: &Plane, i1: &Plane, u1: &Plane, u2: &Plane, lambda: f32) -> f64 {
    let (h, w) = (i0.height, i0.width);
    let n = h * w;
    let mut gx = vec![0.0f32; n];
    let mut gy = vec![0.0f32; n];
    let mut tv = 0.0f64;
    for u in [u1, u2] {
        forward_gradient(&u.data, w, h, &mut gx, &mut gy);
        tv += (0..n).map(|k| (gx[k] as f64).hypot(gy[k] as f64)).sum::<f64>();
    }
    let i1w = warp(i1, u1, u2);
    let data: f64 = (0..n).map(|k| (i1w.data[k] - i0.data[k]).abs() as f64).sum();
    tv + lambda as f64 * data
}

fn warp(img: &Plane, u1: &Plane, u2: &Plane) -> Plane {
    Plane::from_fn(img.height, img.width, |y, x| {
        let k = y * img.width + x;
        img.sample_clamped(y as f32 + u2.data[k], x as f32 + u1.data[k])
    })
}

fn centered_gradient(img: &Plane) -> (Plane, Plane) {
    let (h, w) = (img.height, img.width);
    let dx = Plane::from_fn(h, w, |y, x| {
        let l = img.at(y, x.saturating_sub(1));
        let r = img.at(y, (x + 1).min(w - 1));
        0.5 * (r - l)
    });
    let dy = Plane::from_fn(h, w, |y, x| {
        let t = img.at(y.saturating_sub(1), x);
        let b = img.at((y + 1).min(h - 1), x);
        0.5 * (b - t)
    });
    (dx, dy)
}

/// Forward differences, zero on the last row/column.
fn forward_gradient(f: &[f32], w: usize, h: usize, fx: &mut [f32], fy: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            fx[k] = if x + 1 < w { f[k + 1] - f[k] } else { 0.0 };
            fy[k] = if y + 1 < h { f[k + w] - f[k] } else { 0.0 };
        }
    }
}

/// Backward-difference divergence; the negative adjoint of [`forward_gradient`].
fn divergence(v1: &[f32], v2: &[f32], w: usize, h: usize, div: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let dx = if x == 0 {
                v1[k]
            } else if x + 1 == w {
                -v1[k - 1]
            } else {
                v1[k] - v1[k - 1]
            };
            let dy = if y == 0 {
                v2[k]
            } else if y + 1 == h {
                -v2[k - w]
            } else {
                v2[k] - v2[k - w]
            };
            div[k] = dx + dy;
        }
    }
}

pub(crate) fn gaussian_blur(img: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = (img.height as isize, img.width as isize);
    // Symmetric (mirror) boundary.
    let reflect = |i: isize, n: isize| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let horiz = Plane::from_fn(img.height, img.width, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(j, k)| k * img.at(y, reflect(x as isize + j as isize - radius, w)))
            .sum()
    });
    Plane::from_fn(img.height, img.width, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(j, k)| k * horiz.at(reflect(y as isize + j as isize - radius, h), x))
            .sum()
    })
}

fn zoom_out(img: &Plane, h: usize, w: usize, factor: f32) -> Plane {
    let sigma = 0.6 * (1.0 / (factor * factor) - 1.0).max(0.0).sqrt();
    let smooth = gaussian_blur(img, sigma);
    let sy = img.height as f32 / h as f32;
    let sx = img.width as f32 / w as f32;
    Plane::from_fn(h, w, |y, x| smooth.sample_clamped(y as f32 * sy, x as f32 * sx))
}

fn zoom_in_flow(flow: &Plane, h: usize, w: usize, magnify: f32) -> Plane {
    let sy = flow.height as f32 / h as f32;
    let sx = flow.width as f32 / w as f32;
    Plane::from_fn(h, w, |y, x| magnify * flow.sample_clamped(y as f32 * sy, x as f32 * sx))
}
