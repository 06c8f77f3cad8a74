use std::f32::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MclError, Result};
use crate::motionfield::{FlowPair, FlowSequence, Frame, Plane};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Disk radius or square half-side, px.
    pub radius: f32,
    /// Width of the alpha ramp at the object edge, px.
    pub edge: f32,
}

/// Everything needed to render one synthetic video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub channels: usize,
    pub object: ObjectSpec,
    /// Object center (x, y) at frame 0.
    pub start: (f32, f32),
    /// Object velocity relative to the background, px/frame (u, v).
    pub velocity: (f32, f32),
    /// Camera pan: added to every pixel's displacement.
    pub pan: (f32, f32),
    pub label: u32,
    /// Texture seed.
    pub seed: u64,
}

impl SceneSpec {
    /// On-screen displacement of the object per frame.
    pub fn object_motion(&self) -> (f32, f32) {
        (self.velocity.0 + self.pan.0, self.velocity.1 + self.pan.1)
    }

    pub fn center(&self, frame: usize) -> (f32, f32) {
        let (du, dv) = self.object_motion();
        (self.start.0 + du * frame as f32, self.start.1 + dv * frame as f32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(MclError::Spec(format!("need at least 2 frames, got {}", self.frames)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(MclError::Spec(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(MclError::Spec(format!("canvas {}x{} too small", self.height, self.width)));
        }
        let o = &self.object;
        if !(o.radius >= 1.0 && o.edge > 0.0 && o.radius.is_finite() && o.edge.is_finite()) {
            return Err(MclError::Spec(format!("bad object radius {} / edge {}", o.radius, o.edge)));
        }
        let finite = [self.start.0, self.start.1, self.velocity.0, self.velocity.1, self.pan.0, self.pan.1];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(MclError::Spec("non-finite trajectory".into()));
        }
        // Trajectories are linear, so checking both ends covers every frame.
        let reach = o.radius + o.edge;
        for i in [0, self.frames - 1] {
            let (cx, cy) = self.center(i);
            if cx - reach < 0.0
                || cy - reach < 0.0
                || cx + reach > (self.width - 1) as f32
                || cy + reach > (self.height - 1) as f32
            {
                return Err(MclError::Spec(format!(
                    "object leaves the {}x{} canvas at frame {i} (center {cx:.2},{cy:.2}, reach {reach})",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Returns `spec` with `pan` added to the camera motion.
pub fn add_camera_pan(spec: &SceneSpec, pan: (f32, f32)) -> Result<SceneSpec> {
    let mut out = spec.clone();
    out.pan = (spec.pan.0 + pan.0, spec.pan.1 + pan.1);
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub flow: FlowSequence,
    /// N×H×W object membership, frame-major.
    pub mask: Vec<bool>,
    pub label: u32,
}

impl GroundTruth {
    pub fn mask_frame(&self, i: usize) -> &[bool] {
        let hw = self.flow.flows[0].height() * self.flow.flows[0].width();
        &self.mask[i * hw..(i + 1) * hw]
    }
}

/// Sum of plane waves; evaluated analytically so sub-pixel placement is exact.
#[derive(Clone, Debug)]
struct Texture {
    waves: Vec<(f32, f32, f32, f32)>,
    base: [f32; 3],
    gain: [f32; 3],
}

impl Texture {
    fn random(rng: &mut impl Rng, base: f32, amplitude: f32) -> Self {
        let waves: Vec<_> = (0..6)
            .map(|_| {
                let period = rng.random_range(5.0f32..14.0);
                let angle = rng.random_range(0.0..TAU);
                let phase = rng.random_range(0.0..TAU);
                let weight = rng.random_range(0.5f32..1.0);
                (angle.cos() / period, angle.sin() / period, phase, weight)
            })
            .collect();
        let total: f32 = waves.iter().map(|w| w.3).sum();
        let waves = waves.into_iter().map(|(a, b, c, w)| (a, b, c, w / total)).collect();
        let tint = [rng.random_range(0.8f32..1.2), rng.random_range(0.8f32..1.2), rng.random_range(0.8f32..1.2)];
        Texture { waves, base: tint.map(|t| base * t), gain: tint.map(|t| amplitude * t) }
    }

    fn at(&self, x: f32, y: f32, c: usize) -> f32 {
        let mut s = 0.0;
        for &(fx, fy, ph, w) in &self.waves {
            s += w * (TAU * (fx * x + fy * y) + ph).sin();
        }
        // Scale up: a normalized sum of random-phase waves rarely nears ±1.
        (self.base[c] + self.gain[c] * 1.8 * s).clamp(0.0, 1.0)
    }
}

fn alpha(obj: &ObjectSpec, dx: f32, dy: f32) -> f32 {
    let d = match obj.shape {
        Shape::Disk => (dx * dx + dy * dy).sqrt(),
        Shape::Square => dx.abs().max(dy.abs()),
    } - obj.radius;
    (0.5 - d / obj.edge).clamp(0.0, 1.0)
}

/// Renders the video and its ground truth.
pub fn generate(spec: &SceneSpec) -> Result<(Vec<Frame>, GroundTruth)> {
    spec.validate()?;
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let mut rng = stream_rng(spec.seed, 0);
    let bg_base = rng.random_range(0.35..0.65);
    let bg = Texture::random(&mut rng, bg_base, 0.25);
    let obj_base = if rng.random_bool(0.5) { 0.25 } else { 0.75 };
    let fg = Texture::random(&mut rng, obj_base, 0.2);

    let (du, dv) = spec.object_motion();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut mask = Vec::with_capacity(spec.frames * h * w);
    let mut flows = Vec::with_capacity(spec.frames - 1);
    for i in 0..spec.frames {
        let (cx, cy) = spec.center(i);
        let (px, py) = (spec.pan.0 * i as f32, spec.pan.1 * i as f32);
        let mut data = Vec::with_capacity(h * w * ch);
        let mut u = Plane::zeros(h, w);
        let mut v = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f32, y as f32);
                let a = alpha(&spec.object, xf - cx, yf - cy);
                for c in 0..ch {
                    let b = bg.at(xf - px, yf - py, c);
                    let o = fg.at(xf - cx, yf - cy, c);
                    data.push(a * o + (1.0 - a) * b);
                }
                let inside = a >= 0.5;
                mask.push(inside);
                let (fu, fv) = if inside { (du, dv) } else { spec.pan };
                u.set(y, x, fu);
                v.set(y, x, fv);
            }
        }
        frames.push(Frame::new(h, w, ch, data)?);
        if i + 1 < spec.frames {
            flows.push(FlowPair::new(u, v)?);
        }
    }
    let flow = FlowSequence::from_pair_flows(flows)?;
    Ok((frames, GroundTruth { flow, mask, label: spec.label }))
}

/// Random scene layout parameters for corpus generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub channels: usize,
    pub radius: (f32, f32),
    pub edge: f32,
    /// Per-axis camera pan drawn uniformly from [−max_pan, max_pan].
    pub max_pan: f32,
    /// Object speeds, px/frame; classes are direction × speed.
    pub speeds: Vec<f32>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 32,
            channels: 3,
            radius: (6.0, 9.0),
            edge: 1.0,
            max_pan: 0.25,
            speeds: vec![0.5, 1.0],
        }
    }
}

/// Unit directions: right, down, left, up.
pub const DIRECTIONS: [(f32, f32); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        DIRECTIONS.len() * self.speeds.len()
    }

    /// Velocity of trajectory class `label`.
    pub fn class_velocity(&self, label: u32) -> Result<(f32, f32)> {
        let l = label as usize;
        if l >= self.num_classes() {
            return Err(MclError::Spec(format!("label {label} outside {} classes", self.num_classes())));
        }
        let (dx, dy) = DIRECTIONS[l % DIRECTIONS.len()];
        let s = self.speeds[l / DIRECTIONS.len()];
        Ok((dx * s, dy * s))
    }

    /// Draws a scene of class `label` whose trajectory fits the canvas.
    pub fn sample(&self, label: u32, rng: &mut impl Rng) -> Result<SceneSpec> {
        let velocity = self.class_velocity(label)?;
        let radius = if self.radius.1 > self.radius.0 {
            rng.random_range(self.radius.0..self.radius.1)
        } else {
            self.radius.0
        };
        let shape = if rng.random_bool(0.5) { Shape::Disk } else { Shape::Square };
        let pan = if self.max_pan > 0.0 {
            (rng.random_range(-self.max_pan..=self.max_pan), rng.random_range(-self.max_pan..=self.max_pan))
        } else {
            (0.0, 0.0)
        };
        let reach = radius + self.edge;
        let steps = (self.frames.max(1) - 1) as f32;
        let span = |len: usize, d: f32| -> Result<(f32, f32)> {
            let travel = d * steps;
            let lo = reach - travel.min(0.0);
            let hi = (len - 1) as f32 - reach - travel.max(0.0);
            if hi < lo {
                return Err(MclError::Spec(format!(
                    "class {label} trajectory ({travel:.1} px) does not fit a {len}-px canvas"
                )));
            }
            Ok((lo, hi))
        };
        let (xlo, xhi) = span(self.width, velocity.0 + pan.0)?;
        let (ylo, yhi) = span(self.height, velocity.1 + pan.1)?;
        let spec = SceneSpec {
            height: self.height,
            width: self.width,
            frames: self.frames,
            channels: self.channels,
            object: ObjectSpec { shape, radius, edge: self.edge },
            start: (rng.random_range(xlo..=xhi), rng.random_range(ylo..=yhi)),
            velocity,
            pan,
            label,
            seed: rng.random(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            frames: 4,
            channels: 1,
            object: ObjectSpec { shape: Shape::Disk, radius: 5.0, edge: 1.0 },
            start: (12.0, 16.0),
            velocity: (2.0, 0.0),
            pan: (0.0, 0.0),
            label: 0,
            seed: 3,
        }
    }

    #[test]
    fn trajectory_leaving_canvas_is_rejected() {
        let mut s = spec();
        s.velocity = (5.0, 0.0);
        assert!(matches!(generate(&s), Err(MclError::Spec(_))));
        assert!(matches!(add_camera_pan(&spec(), (0.0, 4.0)), Err(MclError::Spec(_))));
    }

    #[test]
    fn alpha_is_half_on_the_boundary() {
        let o = ObjectSpec { shape: Shape::Square, radius: 3.0, edge: 1.0 };
        assert_eq!(alpha(&o, 3.0, -1.0), 0.5);
        assert_eq!(alpha(&o, 0.0, 0.0), 1.0);
        assert_eq!(alpha(&o, 5.0, 0.0), 0.0);
    }

    #[test]
    fn sampled_scenes_fit() {
        let cfg = SceneConfig::default();
        let mut rng = stream_rng(1, 1);
        for label in 0..cfg.num_classes() as u32 {
            for _ in 0..20 {
                let s = cfg.sample(label, &mut rng).unwrap();
                assert_eq!(s.velocity, cfg.class_velocity(label).unwrap());
            }
        }
        assert!(cfg.class_velocity(8).is_err());
    }
}
