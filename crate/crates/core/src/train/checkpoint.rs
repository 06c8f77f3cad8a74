//! "MCLK" checkpoints: everything needed to continue a run bit-exactly.
//!
//! Layout (little endian): magic, u32 version, u32 header length, JSON
//! header, then tensor groups (u32 count; per tensor u32 rank, u32 dims,
//! f64 data), the raw queue buffer, and a SHA-256 of all preceding bytes.

use std::path::Path;

use mcl_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::NegativeQueue;
use crate::error::{MclError, Result};
use crate::motionfield::write_atomic;

pub const CKPT_MAGIC: &[u8; 4] = b"MCLK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Optimizer steps completed.
    pub step: usize,
    pub config_hash: String,
    pub param_names: Vec<String>,
    pub buffer_names: Vec<String>,
    pub queue_capacity: usize,
    pub queue_dim: usize,
    pub queue_head: usize,
    pub queue_filled: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Tensor>,
    pub key_params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
    pub key_buffers: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
    pub queue: NegativeQueue,
}

fn put_group(out: &mut Vec<u8>, group: &[Tensor]) {
    out.extend((group.len() as u32).to_le_bytes());
    for t in group {
        out.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| MclError::Format { path: "<checkpoint>".into(), msg: "truncated".into() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| MclError::Format {
            path: "<checkpoint>".into(),
            msg: "tensor size overflow".into(),
        })?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn group(&mut self) -> Result<Vec<Tensor>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = self.f64s(shape.iter().product())?;
            out.push(Tensor::new(&shape, data));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend(CKPT_MAGIC);
        out.extend(CKPT_VERSION.to_le_bytes());
        out.extend((header.len() as u32).to_le_bytes());
        out.extend(&header);
        for g in [&self.params, &self.key_params, &self.buffers, &self.key_buffers, &self.velocity] {
            put_group(&mut out, g);
        }
        for v in self.queue.raw() {
            out.extend(v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| MclError::Format { path: "<checkpoint>".into(), msg: msg.into() };
        if bytes.len() < 44 || &bytes[..4] != CKPT_MAGIC {
            return Err(bad("not an MCLK checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(&format!("header: {e}")))?;
        let params = r.group()?;
        let key_params = r.group()?;
        let buffers = r.group()?;
        let key_buffers = r.group()?;
        let velocity = r.group()?;
        let queue_buf = r.f64s(header.queue_capacity * header.queue_dim)?;
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        if params.len() != header.param_names.len() || key_params.len() != params.len() || velocity.len() != params.len()
        {
            return Err(bad("parameter groups disagree with the header"));
        }
        let queue = NegativeQueue::from_parts(
            header.queue_capacity,
            header.queue_dim,
            queue_buf,
            header.queue_head,
            header.queue_filled,
        )?;
        Ok(Self { header, params, key_params, buffers, key_buffers, velocity, queue })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MclError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            MclError::Format { msg, .. } => MclError::format(path, msg),
            other => other,
        })
    }
}
