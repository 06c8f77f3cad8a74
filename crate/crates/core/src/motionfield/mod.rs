//! Optical flow, motion boundaries and pooled motion maps.

mod boundary;
mod cache;
mod flow;
mod frame;
mod tvl1;
mod volume;

pub use boundary::{motion_boundary, motion_map, MotionBoundary};
pub use cache::{
    decode_motion, decode_motion_header, encode_motion, read_motion_cache, write_motion_cache, MOTION_MAGIC,
    MOTION_VERSION,
};
pub use cache::write_atomic;
pub use flow::{flow_sequence, FlowPair, FlowSequence};
pub use frame::{Frame, Plane, LUMA_WEIGHTS, MIN_FRAME_SIDE};
pub(crate) use tvl1::gaussian_blur;
pub use tvl1::{energy, tvl1_flow, tvl1_flow_traced, SolverTrace, Tvl1Params, MIN_LEVEL_SIDE};
pub use volume::{
    build_motion_volume, l2_normalize_map, l2_normalize_plane, MotionVolume, NormalizedMap, EPSILON_NORM,
};
