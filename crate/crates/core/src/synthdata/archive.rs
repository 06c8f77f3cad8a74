//! Ground-truth archive: `"MCLG"`, u32 version, u32 N, u32 H, u32 W, u32
//! label, N·H·W mask bits packed LSB-first, then per frame the f32 `u` plane
//! followed by the `v` plane. All little-endian.

use std::fs;
use std::path::Path;

use super::scene::GroundTruth;
use crate::error::{MclError, Result};
use crate::motionfield::{FlowPair, FlowSequence, Plane};

pub const GT_MAGIC: &[u8; 4] = b"MCLG";
pub const GT_VERSION: u32 = 1;
const HEADER: usize = 24;

pub fn encode_ground_truth(gt: &GroundTruth) -> Vec<u8> {
    let n = gt.flow.len();
    let (h, w) = (gt.flow.flows[0].height(), gt.flow.flows[0].width());
    let mut out = Vec::with_capacity(HEADER + gt.mask.len().div_ceil(8) + n * h * w * 8);
    out.extend_from_slice(GT_MAGIC);
    for v in [GT_VERSION, n as u32, h as u32, w as u32, gt.label] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bits = vec![0u8; gt.mask.len().div_ceil(8)];
    for (i, &m) in gt.mask.iter().enumerate() {
        if m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    for f in &gt.flow.flows {
        for plane in [&f.u, &f.v] {
            for v in &plane.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_ground_truth(bytes: &[u8], origin: &Path) -> Result<GroundTruth> {
    let bad = |msg: String| MclError::format(origin, msg);
    if bytes.len() < HEADER || &bytes[..4] != GT_MAGIC {
        return Err(bad("not a ground-truth archive (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != GT_VERSION {
        return Err(bad(format!("unsupported version {}", word(0))));
    }
    let (n, h, w, label) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4));
    let cells = n * h * w;
    let mask_bytes = cells.div_ceil(8);
    if n == 0 || bytes.len() != HEADER + mask_bytes + cells * 8 {
        return Err(bad(format!("length {} does not match {n}x{h}x{w}", bytes.len())));
    }
    let bits = &bytes[HEADER..HEADER + mask_bytes];
    let mask = (0..cells).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let mut floats = bytes[HEADER + mask_bytes..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut plane = || Plane::new(h, w, floats.by_ref().take(h * w).collect());
    let mut flows = Vec::with_capacity(n);
    for _ in 0..n {
        let u = plane()?;
        let v = plane()?;
        flows.push(FlowPair::new(u, v).map_err(|e| bad(e.to_string()))?);
    }
    Ok(GroundTruth { flow: FlowSequence { flows }, mask, label })
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    crate::motionfield::write_atomic(path, &encode_ground_truth(gt))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = fs::read(path).map_err(|e| MclError::io(path, e))?;
    decode_ground_truth(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_odd_bit_count() {
        let u = Plane::from_fn(3, 3, |y, x| (y * 3 + x) as f32 * 0.25);
        let v = Plane::from_fn(3, 3, |y, _| -(y as f32));
        let flow = FlowSequence::from_pair_flows(vec![FlowPair::new(u, v).unwrap()]).unwrap();
        let mask = (0..18).map(|i| i % 3 == 0 || i == 17).collect();
        let gt = GroundTruth { flow, mask, label: 5 };
        let bytes = encode_ground_truth(&gt);
        assert_eq!(bytes.len(), HEADER + 3 + 2 * 9 * 8);
        assert_eq!(decode_ground_truth(&bytes, Path::new("mem")).unwrap(), gt);
        let mut broken = bytes.clone();
        broken[0] = b'Z';
        assert!(decode_ground_truth(&broken, Path::new("mem")).is_err());
        assert!(decode_ground_truth(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }
}
