//! MoCo-style instance discrimination: InfoNCE against a FIFO queue of
//! negative keys, with a momentum-averaged key encoder.

use mcl_autograd::{Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MclError, Result};
use crate::validate::{Validate, Validator};

pub const UNIT_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueInit {
    /// Seeded random unit vectors, queue reported full from the start.
    Random,
    /// Start empty; the first batches fill it.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub tau: f64,
    pub queue_size: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub queue_init: QueueInit,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self { tau: 0.1, queue_size: 4096, alpha: 0.999, batch_size: 32, queue_init: QueueInit::Random }
    }
}

impl Validate for ContrastConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.tau > 0.0 && self.tau.is_finite(), p, "tau", "must be positive");
        v.check((0.0..1.0).contains(&self.alpha), p, "alpha", "must lie in [0, 1)");
        v.check(self.batch_size >= 1, p, "batch_size", "must be at least 1");
        v.check(
            self.queue_size >= self.batch_size,
            p,
            "queue_size",
            format!("must be at least batch_size ({})", self.batch_size),
        );
    }
}

/// Ring buffer of `capacity` unit-norm keys of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeQueue {
    dim: usize,
    capacity: usize,
    buffer: Vec<f64>,
    head: usize,
    filled: usize,
}

fn check_unit(key: &[f64]) -> Result<()> {
    let n = key.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(MclError::Input(format!("key norm {n} is not 1 within {UNIT_TOL}")));
    }
    Ok(())
}

impl NegativeQueue {
    pub fn empty(capacity: usize, dim: usize) -> Self {
        Self { dim, capacity, buffer: vec![0.0; capacity * dim], head: 0, filled: 0 }
    }

    /// Full queue of seeded random unit vectors.
    pub fn random(capacity: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut q = Self::empty(capacity, dim);
        for row in q.buffer.chunks_exact_mut(dim) {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        q.filled = capacity;
        q
    }

    pub fn new(cfg: &ContrastConfig, dim: usize, rng: &mut impl Rng) -> Self {
        match cfg.queue_init {
            QueueInit::Random => Self::random(cfg.queue_size, dim, rng),
            QueueInit::WarmStart => Self::empty(cfg.queue_size, dim),
        }
    }

    /// Restores a saved state.
    pub fn from_parts(capacity: usize, dim: usize, buffer: Vec<f64>, head: usize, filled: usize) -> Result<Self> {
        if buffer.len() != capacity * dim || head >= capacity.max(1) || filled > capacity {
            return Err(MclError::State("inconsistent queue state".into()));
        }
        Ok(Self { dim, capacity, buffer, head, filled })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn raw(&self) -> &[f64] {
        &self.buffer
    }

    /// Overwrites the oldest entries with `keys`, in order.
    pub fn enqueue<'a>(&mut self, keys: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        let keys: Vec<&[f64]> = keys.into_iter().collect();
        if keys.len() > self.capacity {
            return Err(MclError::Input(format!("batch of {} exceeds queue size {}", keys.len(), self.capacity)));
        }
        for k in &keys {
            if k.len() != self.dim {
                return Err(MclError::Input(format!("key has {} dims, queue {}", k.len(), self.dim)));
            }
            check_unit(k)?;
        }
        for k in keys {
            self.buffer[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(k);
            self.head = (self.head + 1) % self.capacity;
            self.filled = (self.filled + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Stored keys, oldest first.
    pub fn contents(&self) -> Vec<Vec<f64>> {
        let start = (self.head + self.capacity - self.filled) % self.capacity.max(1);
        (0..self.filled)
            .map(|i| {
                let r = (start + i) % self.capacity;
                self.buffer[r * self.dim..(r + 1) * self.dim].to_vec()
            })
            .collect()
    }

    /// Stored keys as a `[filled, dim]` matrix (slot order).
    pub fn matrix(&self) -> Result<Tensor> {
        if self.filled == 0 {
            return Err(MclError::State("negative queue is empty".into()));
        }
        let rows: Vec<usize> = if self.filled == self.capacity {
            (0..self.capacity).collect()
        } else {
            let start = (self.head + self.capacity - self.filled) % self.capacity;
            (0..self.filled).map(|i| (start + i) % self.capacity).collect()
        };
        let mut data = Vec::with_capacity(self.filled * self.dim);
        for r in rows {
            data.extend_from_slice(&self.buffer[r * self.dim..(r + 1) * self.dim]);
        }
        Ok(Tensor::new(&[self.filled, self.dim], data))
    }
}

/// −log softmax of the positive logit among {q·k⁺} ∪ {q·k⁻ⱼ}, all over τ.
pub fn info_nce(q: &[f64], k_pos: &[f64], queue: &NegativeQueue, tau: f64) -> Result<f64> {
    if queue.filled() == 0 {
        return Err(MclError::State("negative queue is empty".into()));
    }
    if q.len() != queue.dim() || k_pos.len() != queue.dim() {
        return Err(MclError::Input("embedding dimension mismatch".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let pos = dot(q, k_pos) / tau;
    let negs = queue.matrix()?;
    let logits: Vec<f64> = negs.data().chunks_exact(queue.dim()).map(|k| dot(q, k) / tau).collect();
    let top = logits.iter().copied().fold(pos, f64::max);
    let sum = (pos - top).exp() + logits.iter().map(|l| (l - top).exp()).sum::<f64>();
    Ok(top + sum.ln() - pos)
}

/// Batch-mean InfoNCE on the tape. `q`, `k` are `[B, d]` (`k` should be
/// constant); `negatives` is `[K, d]`.
pub fn info_nce_batch<'t>(q: Var<'t>, k: Var<'t>, negatives: &Tensor, tau: f64) -> Var<'t> {
    let tape = q.tape();
    let b = q.shape()[0];
    // Logits of unit vectors never exceed 1/τ; shifting by it keeps exp finite.
    let shift = 1.0 / tau;
    let pos = q.mul(k).sum_axes(&[1]).scale(1.0 / tau).add_scalar(-shift);
    let neg_t = tape.constant(mcl_autograd::kernels::transpose(negatives));
    let neg = q.matmul(neg_t).scale(1.0 / tau).add_scalar(-shift);
    let denom = pos.exp().add(neg.exp().sum_axes(&[1]));
    denom.ln().sub(pos).sum_all().scale(1.0 / b as f64)
}

/// `key ← α·key + (1 − α)·query`, parameter by parameter.
pub fn momentum_update(query: &[Tensor], key: &mut [Tensor], alpha: f64) -> Result<()> {
    if query.len() != key.len() || query.iter().zip(key.iter()).any(|(q, k)| q.shape() != k.shape()) {
        return Err(MclError::Input("query and key parameter sets differ in structure".into()));
    }
    for (k, q) in key.iter_mut().zip(query) {
        for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = alpha * *kv + (1.0 - alpha) * qv;
        }
    }
    Ok(())
}
