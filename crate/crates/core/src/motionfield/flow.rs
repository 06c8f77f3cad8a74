use super::frame::{Frame, Plane};
use super::tvl1::{tvl1_flow, Tvl1Params};
use crate::error::{MclError, Result};

/// Per-pixel displacement (pixels/frame) from one frame to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    pub u: Plane,
    pub v: Plane,
}

impl FlowPair {
    pub fn new(u: Plane, v: Plane) -> Result<Self> {
        if !u.same_shape(&v) {
            return Err(MclError::Shape(format!(
                "flow components differ: {}x{} vs {}x{}",
                u.height, u.width, v.height, v.width
            )));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { u: Plane::zeros(height, width), v: Plane::zeros(height, width) }
    }

    /// Constant displacement field.
    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Self {
        Self {
            u: Plane::from_fn(height, width, |_, _| u),
            v: Plane::from_fn(height, width, |_, _| v),
        }
    }

    pub fn height(&self) -> usize {
        self.u.height
    }

    pub fn width(&self) -> usize {
        self.u.width
    }

    pub fn all_finite(&self) -> bool {
        self.u.all_finite() && self.v.all_finite()
    }

    /// Adds a constant (camera-translation) field.
    pub fn translated(&self, du: f32, dv: f32) -> Self {
        let mut out = self.clone();
        out.u.data.iter_mut().for_each(|x| *x += du);
        out.v.data.iter_mut().for_each(|x| *x += dv);
        out
    }
}

/// One flow per frame; the last entry repeats the second-to-last.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSequence {
    pub flows: Vec<FlowPair>,
}

impl FlowSequence {
    /// Wraps `N − 1` consecutive-pair flows, appending a copy of the last.
    pub fn from_pair_flows(mut flows: Vec<FlowPair>) -> Result<Self> {
        let last = flows
            .last()
            .cloned()
            .ok_or_else(|| MclError::Input("flow sequence needs at least one frame pair".into()))?;
        flows.push(last);
        Ok(Self { flows })
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

/// TV-L1 flow between every consecutive frame pair of `video`.
pub fn flow_sequence(video: &[Frame], params: &Tvl1Params) -> Result<FlowSequence> {
    if video.len() < 2 {
        return Err(MclError::Input(format!(
            "flow sequence needs at least 2 frames, got {}",
            video.len()
        )));
    }
    let pairs = video
        .windows(2)
        .map(|w| tvl1_flow(&w[0], &w[1], params))
        .collect::<Result<Vec<_>>>()?;
    FlowSequence::from_pair_flows(pairs)
}
