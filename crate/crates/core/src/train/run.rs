use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use mcl_autograd::{Tape, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader};
use super::config::RunConfig;
use crate::contrastive::{info_nce_batch, momentum_update, NegativeQueue};
use crate::encoder::{tubelet_batch, Encoder, Mode};
use crate::error::{MclError, Result};
use crate::malign::{mal_loss, resample_motion, similarity_gradient, total_loss, AlignedBatch};
use crate::motionfield::{write_atomic, Frame, MotionVolume};
use crate::rng::{mix, stream_rng};
use crate::sampler::{sample_view_pair, Tubelet};
use crate::synthdata::{load_motion, Dataset, Split, VideoRecord};
use crate::validate::Validate;

const INIT_STREAM: u64 = 1;
const QUEUE_STREAM: u64 = 2;
const EPOCH_STREAM: u64 = 3;
const STEP_STREAM: u64 = 4;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const LAST_CHECKPOINT: &str = "checkpoints/last.mclk";

/// Decoded videos and their motion volumes, held in memory for training.
pub struct TrainData {
    pub records: Vec<VideoRecord>,
    pub videos: Vec<Vec<Frame>>,
    pub motion: Vec<MotionVolume>,
}

impl TrainData {
    pub fn load(ds: &Dataset, cache_dir: &Path, split: Split) -> Result<Self> {
        let records: Vec<VideoRecord> = ds.records(split).cloned().collect();
        if records.is_empty() {
            return Err(MclError::Input(format!("no {split:?} videos in {}", ds.root.display())));
        }
        let loaded = records
            .par_iter()
            .map(|r| Ok((ds.load_video(r)?, load_motion(cache_dir, r)?)))
            .collect::<Result<Vec<_>>>()?;
        let (videos, motion) = loaded.into_iter().unzip();
        Ok(Self { records, videos, motion })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based index of the completed optimizer step.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub nce: f64,
    pub mal: Option<f64>,
    pub mal_components: BTreeMap<String, f64>,
    pub mal_skipped: usize,
    pub fallback_crops: usize,
}

/// Parameters, optimizer and queue of a run in progress.
pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a TrainData,
    seed: u64,
    pub encoder: Encoder,
    pub key: Encoder,
    pub velocity: Vec<Tensor>,
    pub queue: NegativeQueue,
    pub step: usize,
    steps_per_epoch: usize,
}

/// Hash of the settings that shape the optimization trajectory; resuming
/// requires it to match.
pub fn trajectory_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.train.max_steps = None;
    c.train.checkpoint_every = 0;
    c.output_dir = PathBuf::new();
    c.probe = Default::default();
    c.content_hash()
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, data: &'a TrainData) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed()?;
        let batch = cfg.contrast.batch_size;
        if data.len() < batch {
            return Err(MclError::Config(format!(
                "contrast.batch_size {batch} exceeds the {} training videos",
                data.len()
            )));
        }
        let encoder = Encoder::new(cfg.encoder.clone(), &mut stream_rng(seed, INIT_STREAM))?;
        let key = encoder.clone();
        let velocity = encoder.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let queue = NegativeQueue::new(&cfg.contrast, cfg.encoder.embed_dim, &mut stream_rng(seed, QUEUE_STREAM));
        Ok(Self { cfg, data, seed, encoder, key, velocity, queue, step: 0, steps_per_epoch: data.len() / batch })
    }

    pub fn from_checkpoint(cfg: &'a RunConfig, data: &'a TrainData, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, data)?;
        if ckpt.header.config_hash != trajectory_hash(cfg) {
            return Err(MclError::State("checkpoint was written under a different configuration".into()));
        }
        let same = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape());
        if !same(&ckpt.params, &t.encoder.params) || !same(&ckpt.buffers, &t.encoder.buffers) {
            return Err(MclError::State("checkpoint tensors do not match the encoder configuration".into()));
        }
        t.encoder.params = ckpt.params;
        t.encoder.buffers = ckpt.buffers;
        t.key.params = ckpt.key_params;
        t.key.buffers = ckpt.key_buffers;
        t.velocity = ckpt.velocity;
        t.queue = ckpt.queue;
        t.step = ckpt.header.step;
        Ok(t)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.cfg.train.epochs
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Cosine-annealed rate for 0-based step `s`.
    pub fn learning_rate(&self, s: usize) -> f64 {
        0.5 * self.cfg.train.learning_rate * (1.0 + (PI * s as f64 / self.total_steps() as f64).cos())
    }

    fn batch_indices(&self, s: usize) -> Vec<usize> {
        let epoch = s / self.steps_per_epoch;
        let j = s % self.steps_per_epoch;
        let mut perm: Vec<usize> = (0..self.data.len()).collect();
        perm.shuffle(&mut stream_rng(self.seed, mix(EPOCH_STREAM, epoch as u64)));
        let b = self.cfg.contrast.batch_size;
        perm[j * b..(j + 1) * b].to_vec()
    }

    /// Query/key view pairs of step `s`; sample `i` draws from its own stream.
    fn views(&self, s: usize) -> Result<Vec<(Tubelet, Tubelet)>> {
        let stream = mix(STEP_STREAM, s as u64);
        self.batch_indices(s)
            .par_iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut rng = stream_rng(self.seed, mix(stream, i as u64));
                let d = self.data;
                sample_view_pair(&d.records[v].video_id, &d.videos[v], &d.motion[v], &self.cfg.sampler, &mut rng)
            })
            .collect()
    }

    /// Runs one optimizer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        if self.finished() {
            return Err(MclError::State("training schedule already complete".into()));
        }
        let s = self.step;
        let cfg = self.cfg;
        let lr = self.learning_rate(s);
        let pairs = self.views(s)?;
        let queries: Vec<&Tubelet> = pairs.iter().map(|p| &p.0).collect();
        let keys: Vec<&Tubelet> = pairs.iter().map(|p| &p.1).collect();
        let fallback_crops = pairs.iter().filter(|p| p.0.fallback).count() + pairs.iter().filter(|p| p.1.fallback).count();

        let key_tape = Tape::new();
        let (k_emb, k_stats) = key_tape.no_grad(|| -> Result<_> {
            let p = self.key.bind(&key_tape, false);
            let x = key_tape.constant(tubelet_batch(&keys, &cfg.encoder)?);
            let f = self.key.forward(&p, x, Mode::Train)?;
            Ok((f.embedding.value().as_ref().clone(), f.stats))
        })?;
        let negatives = self.queue.matrix()?;

        let tape = Tape::new();
        let p = self.encoder.bind(&tape, true);
        let x = tape.constant(tubelet_batch(&queries, &cfg.encoder)?);
        let f = self.encoder.forward(&p, x, Mode::Train)?;
        let k = tape.constant(k_emb.clone());
        let nce = info_nce_batch(f.embedding, k, &negatives, cfg.contrast.tau);
        let g = if cfg.mal.variant.needs_gradient() {
            Some(similarity_gradient(&tape, f.embedding, k, f.features, cfg.mal.second_order)?)
        } else {
            None
        };
        let mal = if cfg.mal.variant == crate::malign::MalVariant::None {
            None
        } else {
            let (_, t, h, w) = cfg.encoder.feature_shape();
            let targets: Vec<_> = queries.iter().map(|q| resample_motion(&q.motion, (t, h, w))).collect();
            mal_loss(&cfg.mal, f.features, g, &AlignedBatch::new(&targets)?)?
        };
        let total = total_loss(nce, mal.as_ref().map(|m| m.value), &cfg.mal)?;
        let grads = tape.grad(total, &p, false);

        let (mu, wd) = (cfg.train.momentum, cfg.train.weight_decay);
        for ((param, vel), g) in self.encoder.params.iter_mut().zip(&mut self.velocity).zip(&grads) {
            let gv = g.value();
            for ((pv, vv), &gi) in param.data_mut().iter_mut().zip(vel.data_mut()).zip(gv.data()) {
                *vv = mu * *vv + gi + wd * *pv;
                *pv -= lr * *vv;
            }
        }
        if self.encoder.params.iter().any(|t| !t.all_finite()) {
            return Err(MclError::Numeric(format!("parameters became non-finite at step {}", s + 1)));
        }
        self.encoder.apply_stats(&f.stats);
        self.key.apply_stats(&k_stats);
        momentum_update(&self.encoder.params, &mut self.key.params, cfg.contrast.alpha)?;
        self.queue.enqueue(k_emb.data().chunks_exact(cfg.encoder.embed_dim))?;
        self.step += 1;

        Ok(StepMetrics {
            step: self.step,
            epoch: s / self.steps_per_epoch,
            lr,
            loss: total.item(),
            nce: nce.item(),
            mal: mal.as_ref().map(|m| m.value.item()),
            mal_components: mal
                .as_ref()
                .map(|m| m.components.iter().map(|(n, v)| (n.to_string(), *v)).collect())
                .unwrap_or_default(),
            mal_skipped: mal.as_ref().map_or(0, |m| m.skipped),
            fallback_crops,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                step: self.step,
                config_hash: trajectory_hash(self.cfg),
                param_names: self.encoder.param_names.clone(),
                buffer_names: self.encoder.buffer_names.clone(),
                queue_capacity: self.queue.capacity(),
                queue_dim: self.queue.dim(),
                queue_head: self.queue.head(),
                queue_filled: self.queue.filled(),
            },
            params: self.encoder.params.clone(),
            key_params: self.key.params.clone(),
            buffers: self.encoder.buffers.clone(),
            key_buffers: self.key.buffers.clone(),
            velocity: self.velocity.clone(),
            queue: self.queue.clone(),
        }
    }
}

/// Rebuilds the query encoder stored in a checkpoint.
pub fn encoder_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Encoder> {
    let mut enc = Encoder::new(cfg.encoder.clone(), &mut stream_rng(0, INIT_STREAM))?;
    let same = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape());
    if !same(&ckpt.params, &enc.params) || !same(&ckpt.buffers, &enc.buffers) {
        return Err(MclError::State("checkpoint tensors do not match the encoder configuration".into()));
    }
    enc.params = ckpt.params.clone();
    enc.buffers = ckpt.buffers.clone();
    Ok(enc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub steps: usize,
    pub finished: bool,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    config_hash: String,
    config: &'a RunConfig,
}

/// Trains into `out_dir`: `config.json`, `metrics.jsonl` and
/// `checkpoints/last.mclk`. A directory that already holds a run is only
/// touched with `resume`, which continues from its last checkpoint.
pub fn run_pretrain(cfg: &RunConfig, data: &TrainData, out_dir: &Path, resume: bool) -> Result<PretrainOutcome> {
    let metrics_path = out_dir.join(METRICS_FILE);
    let ckpt_path = out_dir.join(LAST_CHECKPOINT);
    let mut trainer = if resume && ckpt_path.exists() {
        let t = Trainer::from_checkpoint(cfg, data, Checkpoint::read(&ckpt_path)?)?;
        // Drop log lines written after the checkpoint.
        let text = fs::read_to_string(&metrics_path).unwrap_or_default();
        let mut kept = String::new();
        for line in text.lines() {
            let m: StepMetrics =
                serde_json::from_str(line).map_err(|e| MclError::format(&metrics_path, e.to_string()))?;
            if m.step <= t.step {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        write_atomic(&metrics_path, kept.as_bytes())?;
        info!("resuming {} at step {}", out_dir.display(), t.step);
        t
    } else {
        if metrics_path.exists() {
            return Err(MclError::State(format!(
                "{} already holds a run; resume it or choose another output directory",
                out_dir.display()
            )));
        }
        let t = Trainer::new(cfg, data)?;
        fs::create_dir_all(out_dir).map_err(|e| MclError::io(out_dir, e))?;
        let echo = ConfigEcho { config_hash: cfg.content_hash(), config: cfg };
        write_atomic(&out_dir.join(CONFIG_FILE), &serde_json::to_vec_pretty(&echo).expect("config serializes"))?;
        write_atomic(&metrics_path, b"")?;
        t
    };
    let mut log = OpenOptions::new().append(true).open(&metrics_path).map_err(|e| MclError::io(&metrics_path, e))?;
    let stop = cfg.train.max_steps.unwrap_or(usize::MAX);
    while !trainer.finished() && trainer.step < stop {
        let m = trainer.step()?;
        let line = serde_json::to_string(&m).expect("metrics serialize");
        writeln!(log, "{line}").map_err(|e| MclError::io(&metrics_path, e))?;
        if m.step % 10 == 0 || m.step == 1 {
            info!("step {} epoch {} loss {:.4} nce {:.4} mal {:?}", m.step, m.epoch, m.loss, m.nce, m.mal);
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && m.step % every == 0 {
            trainer.checkpoint().write(&ckpt_path)?;
        }
    }
    trainer.checkpoint().write(&ckpt_path)?;
    Ok(PretrainOutcome { steps: trainer.step, finished: trainer.finished(), checkpoint: ckpt_path, metrics: metrics_path })
}

/// Parses a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| MclError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| MclError::format(path, e.to_string())))
        .collect()
}
