use super::boundary::motion_map;
use super::flow::FlowSequence;
use super::frame::Plane;
use crate::error::{MclError, Result};

/// Norm at or below which a map counts as all-zero.
pub const EPSILON_NORM: f64 = 1e-8;

/// Stacked per-frame motion maps (`st`, N×H×W) with their temporal-mean
/// spatial map `s` and spatial-mean temporal profile `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionVolume {
    frames: usize,
    height: usize,
    width: usize,
    st: Vec<f32>,
    s: Plane,
    t: Vec<f32>,
}

impl MotionVolume {
    /// Builds the pooled views from a frame-major N×H×W stack.
    pub fn from_st(frames: usize, height: usize, width: usize, st: Vec<f32>) -> Result<Self> {
        if st.len() != frames * height * width || frames == 0 {
            return Err(MclError::Shape(format!(
                "motion volume {frames}x{height}x{width} needs {} values, got {}",
                frames * height * width,
                st.len()
            )));
        }
        if let Some(bad) = st.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(MclError::Input(format!("motion value {bad} is negative or non-finite")));
        }
        let hw = height * width;
        let mut s = vec![0.0f64; hw];
        let mut t = Vec::with_capacity(frames);
        for frame in st.chunks_exact(hw) {
            let mut total = 0.0f64;
            for (acc, &v) in s.iter_mut().zip(frame) {
                *acc += v as f64;
                total += v as f64;
            }
            t.push((total / hw as f64) as f32);
        }
        let s = Plane {
            height,
            width,
            data: s.into_iter().map(|v| (v / frames as f64) as f32).collect(),
        };
        Ok(Self { frames, height, width, st, s, t })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn st(&self) -> &[f32] {
        &self.st
    }

    pub fn s(&self) -> &Plane {
        &self.s
    }

    pub fn t(&self) -> &[f32] {
        &self.t
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.st[i * hw..(i + 1) * hw]
    }

    /// Sub-volume over the listed frames and the given window, with pooled
    /// views recomputed on the crop.
    pub fn crop(&self, frame_indices: &[usize], top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(MclError::Input(format!(
                "motion crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut st = Vec::with_capacity(frame_indices.len() * height * width);
        for &i in frame_indices {
            if i >= self.frames {
                return Err(MclError::Input(format!("frame index {i} out of {} frames", self.frames)));
            }
            let f = self.frame(i);
            for y in top..top + height {
                st.extend_from_slice(&f[y * self.width + left..y * self.width + left + width]);
            }
        }
        Self::from_st(frame_indices.len(), height, width, st)
    }

    /// Multiplies every motion value by `factor` (> 0).
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::from_st(self.frames, self.height, self.width, self.st.iter().map(|v| v * factor).collect())
    }
}

/// Stacks the motion map of every flow and pools it.
pub fn build_motion_volume(flows: &FlowSequence) -> Result<MotionVolume> {
    let first = flows
        .flows
        .first()
        .ok_or_else(|| MclError::Input("empty flow sequence".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut st = Vec::with_capacity(flows.len() * h * w);
    for f in &flows.flows {
        if f.height() != h || f.width() != w {
            return Err(MclError::Shape("flow sequence mixes frame sizes".into()));
        }
        if !f.all_finite() {
            return Err(MclError::Input("flow contains non-finite values".into()));
        }
        st.extend(motion_map(f).data);
    }
    MotionVolume::from_st(flows.len(), h, w, st)
}

/// A unit-L2 map, or the zero map with `zero` set when the input norm is at
/// most [`EPSILON_NORM`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    pub values: Vec<f64>,
    pub zero: bool,
}

pub fn l2_normalize_map(map: &[f64]) -> NormalizedMap {
    let norm = map.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= EPSILON_NORM || !norm.is_finite() {
        return NormalizedMap { values: vec![0.0; map.len()], zero: true };
    }
    NormalizedMap { values: map.iter().map(|v| v / norm).collect(), zero: false }
}

/// [`Plane`] convenience wrapper around [`l2_normalize_map`].
pub fn l2_normalize_plane(plane: &Plane) -> NormalizedMap {
    let values: Vec<f64> = plane.data.iter().map(|&v| v as f64).collect();
    l2_normalize_map(&values)
}
