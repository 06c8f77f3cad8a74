use crate::error::{MclError, Result};

/// Luma weights used whenever a color frame is reduced to one channel.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

pub const MIN_FRAME_SIDE: usize = 8;

/// Single-channel H×W grid of `f32`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(MclError::Shape(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Bilinear sample at fractional coordinates, clamping to the border.
    pub fn sample_clamped(&self, y: f32, x: f32) -> f32 {
        let maxy = (self.height - 1) as f32;
        let maxx = (self.width - 1) as f32;
        let y = y.clamp(0.0, maxy);
        let x = x.clamp(0.0, maxx);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = y - y0 as f32;
        let fx = x - x0 as f32;
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bottom = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Video frame: H×W×C intensities in [0, 1], C ∈ {1, 3}, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(MclError::Input(format!("frames need 1 or 3 channels, got {channels}")));
        }
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(MclError::Input(format!(
                "frame {height}x{width} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(MclError::Shape(format!(
                "frame {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(MclError::Input(format!("frame value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds a frame from per-pixel values; `f(y, x, c)` must stay in [0, 1].
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn from_plane(plane: &Plane) -> Result<Self> {
        Self::new(plane.height, plane.width, 1, plane.data.clone())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Luminance plane (the frame itself when single-channel).
    pub fn luminance(&self) -> Plane {
        let data = if self.channels == 1 {
            self.data.clone()
        } else {
            self.data
                .chunks_exact(3)
                .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
                .collect()
        };
        Plane { height: self.height, width: self.width, data }
    }

    /// Copies the `height`×`width` window at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width {
            return Err(MclError::Input(format!(
                "crop {height}x{width}@({top},{left}) exceeds frame {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Frame { height, width, channels: self.channels, data })
    }

    /// Unchecked constructor for internal transforms that preserve the value
    /// range by construction.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Frame {
        debug_assert_eq!(data.len(), height * width * channels);
        Frame { height, width, channels, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_frames() {
        assert!(matches!(Frame::new(4, 8, 1, vec![0.0; 32]), Err(MclError::Input(_))));
        assert!(matches!(Frame::new(8, 8, 2, vec![0.0; 128]), Err(MclError::Input(_))));
        assert!(matches!(Frame::new(8, 8, 1, vec![0.0; 63]), Err(MclError::Shape(_))));
        let mut data = vec![0.5; 64];
        data[3] = 1.5;
        assert!(Frame::new(8, 8, 1, data).is_err());
        let mut data = vec![0.5; 64];
        data[3] = f32::NAN;
        assert!(Frame::new(8, 8, 1, data).is_err());
    }

    #[test]
    fn luminance_uses_fixed_weights() {
        let f = Frame::from_fn(8, 8, 3, |_, _, c| [1.0, 0.5, 0.0][c]).unwrap();
        let l = f.luminance();
        assert!((l.at(3, 3) - (0.299 + 0.5 * 0.587)).abs() < 1e-6);
    }

    #[test]
    fn bilinear_sampling_hits_grid_points_and_midpoints() {
        let p = Plane::from_fn(3, 3, |y, x| (y * 3 + x) as f32);
        assert_eq!(p.sample_clamped(1.0, 2.0), 5.0);
        assert_eq!(p.sample_clamped(0.5, 0.5), 2.0);
        assert_eq!(p.sample_clamped(-4.0, 10.0), 2.0);
    }
}
