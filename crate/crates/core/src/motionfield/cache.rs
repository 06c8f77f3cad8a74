//! Motion cache files: magic `MCLM`, u32 version, u32 N, u32 H, u32 W, then
//! N·H·W little-endian f32 motion values, frame-major, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::volume::MotionVolume;
use crate::error::{MclError, Result};

pub const MOTION_MAGIC: &[u8; 4] = b"MCLM";
pub const MOTION_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_motion(volume: &MotionVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + volume.st().len() * 4);
    out.extend_from_slice(MOTION_MAGIC);
    for v in [MOTION_VERSION, volume.frames() as u32, volume.height() as u32, volume.width() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in volume.st() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_motion(bytes: &[u8], origin: &Path) -> Result<MotionVolume> {
    let (n, h, w) = decode_motion_header(bytes, origin)?;
    let count = n * h * w;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(MclError::format(
            origin,
            format!("expected {} payload bytes, found {}", count * 4, body.len()),
        ));
    }
    let st = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    MotionVolume::from_st(n, h, w, st).map_err(|e| MclError::format(origin, e.to_string()))
}

/// `(N, H, W)` from a cache header.
pub fn decode_motion_header(bytes: &[u8], origin: &Path) -> Result<(usize, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(MclError::format(origin, "truncated header"));
    }
    if &bytes[..4] != MOTION_MAGIC {
        return Err(MclError::format(origin, "wrong magic, expected MCLM"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != MOTION_VERSION {
        return Err(MclError::format(origin, format!("unsupported version {version}")));
    }
    Ok((word(8) as usize, word(12) as usize, word(16) as usize))
}

/// Writes atomically (temp file, then rename) so readers never see a
/// partial cache.
pub fn write_motion_cache(path: &Path, volume: &MotionVolume) -> Result<()> {
    write_atomic(path, &encode_motion(volume))
}

pub fn read_motion_cache(path: &Path) -> Result<MotionVolume> {
    let bytes = fs::read(path).map_err(|e| MclError::io(path, e))?;
    decode_motion(&bytes, path)
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| MclError::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("part")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| MclError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| MclError::io(&tmp, e))?;
    f.sync_all().map_err(|e| MclError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| MclError::io(path, e))
}
