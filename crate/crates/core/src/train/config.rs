use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::contrastive::ContrastConfig;
use crate::encoder::EncoderConfig;
use crate::error::{FieldError, MclError, Result};
use crate::evalkit::ProbeProtocol;
use crate::malign::{MalConfig, MalVariant};
use crate::motionfield::Tvl1Params;
use crate::sampler::AugmentConfig;
use crate::synthdata::{CorpusConfig, SceneConfig};
use crate::validate::{Validate, Validator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Initial rate, annealed to zero by a per-step cosine.
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Stop after this many steps without changing the schedule; used to
    /// interrupt and resume runs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4, checkpoint_every: 100, max_steps: None }
    }
}

impl Validate for TrainConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.epochs >= 1, p, "epochs", "must be at least 1");
        v.check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), p, "learning_rate", "must be positive");
        v.check((0.0..1.0).contains(&self.momentum), p, "momentum", "must lie in [0, 1)");
        v.check(self.weight_decay >= 0.0, p, "weight_decay", "must be non-negative");
    }
}

/// Everything a subcommand needs, as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required; there is deliberately no default seed.
    pub seed: Option<u64>,
    pub data_dir: PathBuf,
    /// Motion caches; `<data_dir>/motion` when unset.
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub flow: Tvl1Params,
    pub sampler: AugmentConfig,
    pub encoder: EncoderConfig,
    pub contrast: ContrastConfig,
    pub mal: MalConfig,
    pub train: TrainConfig,
    pub probe: ProbeProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub const PRESETS: [&str; 2] = ["desk", "paper-scale"];

/// Arms of [`RunConfig::ablation_grid`], in order.
pub const GRID_ARMS: [&str; 3] = ["baseline", "ta_sa", "ta_sa_mal"];

impl RunConfig {
    /// Single-core defaults: 64×64 synthetic videos, 8-frame 32×32 tubelets.
    pub fn desk() -> Self {
        let sampler = AugmentConfig { clip_length: 8, clip_stride: 2, crop_size: 32, mirror_prob: 0.0, ..AugmentConfig::default() };
        Self {
            seed: None,
            data_dir: PathBuf::from("data"),
            cache_dir: None,
            output_dir: PathBuf::from("runs/desk"),
            corpus: CorpusConfig::default(),
            flow: Tvl1Params::default(),
            sampler,
            encoder: EncoderConfig::default(),
            contrast: ContrastConfig::default(),
            mal: MalConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeProtocol::default(),
        }
    }

    /// The published constants. Far beyond what this implementation can
    /// train; kept as a record.
    pub fn paper_scale() -> Self {
        Self {
            output_dir: PathBuf::from("runs/paper-scale"),
            corpus: CorpusConfig {
                scene: SceneConfig { height: 256, width: 256, frames: 64, radius: (24.0, 36.0), ..SceneConfig::default() },
                ..CorpusConfig::default()
            },
            sampler: AugmentConfig::default(),
            encoder: EncoderConfig::paper_scale(),
            contrast: ContrastConfig { queue_size: 131_072, batch_size: 64, ..ContrastConfig::default() },
            train: TrainConfig { epochs: 200, ..TrainConfig::default() },
            probe: ProbeProtocol::paper_scale(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-scale" => Ok(Self::paper_scale()),
            _ => Err(MclError::Config(format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")))),
        }
    }

    /// Reads a JSON config; fields it omits keep their desk defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MclError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MclError::format(path, e.to_string()))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.data_dir.join("motion"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            MclError::Validation(vec![FieldError { path: "seed".into(), msg: "is required".into() }])
        })
    }

    /// Applies a `dotted.path=value` override. The value is parsed as JSON
    /// when possible and taken as a string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| MclError::Config(format!("override {assignment:?} is not key=value")))?;
        let path = path.trim();
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut tree;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| MclError::Config(format!("{} is not a section", parts[..i].join("."))))?;
            // Optional sections serialize as null; let overrides create them.
            if !obj.contains_key(*part) {
                return Err(MclError::Validation(vec![FieldError { path: path.into(), msg: "unknown field".into() }]));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            let child = obj.get_mut(*part).unwrap();
            if child.is_null() {
                *child = Value::Object(Default::default());
            }
            node = child;
        }
        *self = serde_json::from_value(tree).map_err(|e| {
            MclError::Validation(vec![FieldError { path: path.into(), msg: format!("invalid value {raw:?}: {e}") }])
        })?;
        Ok(())
    }

    /// The three-arm augmentation/MAL ablation: random-crop baseline, motion
    /// sampling and cropping, and the same with the full alignment loss. Each
    /// arm writes under `output_dir/<arm>`.
    pub fn ablation_grid(&self) -> Vec<(&'static str, RunConfig)> {
        GRID_ARMS
            .iter()
            .map(|&arm| {
                let mut c = self.clone();
                c.output_dir = self.output_dir.join(arm);
                let motion_aware = arm != "baseline";
                c.sampler.temporal_sampling = motion_aware;
                c.sampler.spatial_cropping = motion_aware;
                c.mal.variant = if arm == "ta_sa_mal" { MalVariant::Full } else { MalVariant::None };
                (arm, c)
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Validate for RunConfig {
    fn validate_into(&self, p: &str, v: &mut Validator) {
        v.check(self.seed.is_some(), p, "seed", "is required");
        if let Err(e) = self.flow.validate() {
            v.check(false, p, "flow", e.to_string());
        }
        self.sampler.validate_into(&crate::validate::join(p, "sampler"), v);
        self.encoder.validate_into(&crate::validate::join(p, "encoder"), v);
        self.contrast.validate_into(&crate::validate::join(p, "contrast"), v);
        self.mal.validate_into(&crate::validate::join(p, "mal"), v);
        self.train.validate_into(&crate::validate::join(p, "train"), v);
        self.probe.validate_into(&crate::validate::join(p, "probe"), v);
        let (h, w) = self.encoder.input_size;
        v.check(
            h == self.sampler.crop_size && w == self.sampler.crop_size,
            p,
            "encoder.input_size",
            format!("must equal sampler.crop_size ({})", self.sampler.crop_size),
        );
        v.check(
            self.encoder.input_frames == self.sampler.clip_length,
            p,
            "encoder.input_frames",
            format!("must equal sampler.clip_length ({})", self.sampler.clip_length),
        );
        let scene = &self.corpus.scene;
        v.check(self.sampler.clip_span() <= scene.frames, p, "sampler.clip_length", "clip span exceeds corpus frames");
        v.check(
            self.sampler.crop_size <= scene.height.min(scene.width),
            p,
            "sampler.crop_size",
            "exceeds the corpus frame size",
        );
        if let Err(e) = self.flow.pyramid_sizes(scene.height, scene.width) {
            v.check(false, p, "flow.pyramid_levels", e.to_string());
        }
    }
}
