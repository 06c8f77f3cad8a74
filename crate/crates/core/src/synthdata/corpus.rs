use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::{read_ground_truth, write_ground_truth};
use super::pngio::{read_png, write_png};
use super::scene::{generate, GroundTruth, SceneConfig};
use crate::error::{MclError, Result};
use crate::motionfield::{
    build_motion_volume, decode_motion_header, flow_sequence, read_motion_cache, write_atomic, write_motion_cache,
    Frame, MotionVolume, Tvl1Params,
};
use crate::rng::{mix, stream_rng};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    /// Relative to the manifest's directory.
    pub frame_dir: String,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub label: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub num_classes: usize,
    pub records: Vec<VideoRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub scene: SceneConfig,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), train_per_class: 25, test_per_class: 10 }
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// `path` is either the manifest file or the directory holding it.
    pub fn open(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| MclError::io(&file, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| MclError::format(&file, e.to_string()))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn save(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), &json)
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.manifest.records.iter().filter(move |r| r.split == split)
    }

    pub fn frame_dir(&self, rec: &VideoRecord) -> PathBuf {
        self.root.join(&rec.frame_dir)
    }

    pub fn ground_truth_path(&self, rec: &VideoRecord) -> PathBuf {
        self.root.join("gt").join(format!("{}.mclg", rec.video_id))
    }

    pub fn load_video(&self, rec: &VideoRecord) -> Result<Vec<Frame>> {
        let dir = self.frame_dir(rec);
        (0..rec.n_frames)
            .map(|i| {
                let f = read_png(&dir.join(frame_file_name(i)))?;
                if f.height() != rec.height || f.width() != rec.width {
                    return Err(MclError::format(
                        dir.join(frame_file_name(i)),
                        format!("frame is {}x{}, manifest says {}x{}", f.height(), f.width(), rec.height, rec.width),
                    ));
                }
                Ok(f)
            })
            .collect()
    }

    pub fn load_ground_truth(&self, rec: &VideoRecord) -> Result<GroundTruth> {
        read_ground_truth(&self.ground_truth_path(rec))
    }
}

pub fn cache_path(cache_dir: &Path, video_id: &str) -> PathBuf {
    cache_dir.join(format!("{video_id}.mclm"))
}

/// Renders a balanced corpus into `out_dir`: frame PNGs, ground-truth
/// archives and `manifest.json`. A pure function of (`cfg`, `seed`).
pub fn build_corpus(out_dir: &Path, cfg: &CorpusConfig, seed: u64) -> Result<Dataset> {
    let classes = cfg.scene.num_classes();
    if classes < 2 {
        return Err(MclError::Config("corpus needs at least 2 classes".into()));
    }
    let mut jobs = Vec::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
        for _ in 0..per_class {
            for label in 0..classes as u32 {
                jobs.push((jobs.len(), split, label));
            }
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(index, split, label)| -> Result<VideoRecord> {
            let mut rng = stream_rng(seed, mix(0x5eed, index as u64));
            let spec = cfg.scene.sample(label, &mut rng)?;
            let (frames, gt) = generate(&spec)?;
            let video_id = format!("v{index:05}");
            let frame_dir = format!("frames/{video_id}");
            let dir = out_dir.join(&frame_dir);
            for (i, f) in frames.iter().enumerate() {
                write_png(&dir.join(frame_file_name(i)), f)?;
            }
            write_ground_truth(&out_dir.join("gt").join(format!("{video_id}.mclg")), &gt)?;
            Ok(VideoRecord {
                video_id,
                frame_dir,
                n_frames: spec.frames,
                height: spec.height,
                width: spec.width,
                label,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        root: out_dir.to_path_buf(),
        manifest: Manifest { version: 1, num_classes: classes, records },
    };
    ds.save()?;
    info!("wrote {} videos to {}", ds.manifest.records.len(), out_dir.display());
    Ok(ds)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrecomputeReport {
    pub written: Vec<String>,
    pub reused: Vec<String>,
    /// (video id, error message)
    pub failed: Vec<(String, String)>,
}

/// Motion volume of one video from its frames.
pub fn video_motion(frames: &[Frame], params: &Tvl1Params) -> Result<MotionVolume> {
    build_motion_volume(&flow_sequence(frames, params)?)
}

/// Writes `<cache_dir>/<video_id>.mclm` for every video. Existing caches with
/// matching dimensions are kept unless `force`; a failing video is recorded
/// and the run continues.
pub fn precompute_motion(
    ds: &Dataset,
    params: &Tvl1Params,
    cache_dir: &Path,
    force: bool,
) -> Result<PrecomputeReport> {
    params.validate()?;
    fs::create_dir_all(cache_dir).map_err(|e| MclError::io(cache_dir, e))?;
    let outcomes: Vec<_> = ds
        .manifest
        .records
        .par_iter()
        .map(|rec| {
            let path = cache_path(cache_dir, &rec.video_id);
            if !force && cache_matches(&path, rec) {
                return (rec.video_id.clone(), Ok(false));
            }
            let r = ds
                .load_video(rec)
                .and_then(|frames| video_motion(&frames, params))
                .and_then(|vol| write_motion_cache(&path, &vol))
                .map(|_| true);
            (rec.video_id.clone(), r)
        })
        .collect();
    let mut report = PrecomputeReport::default();
    for (id, r) in outcomes {
        match r {
            Ok(true) => report.written.push(id),
            Ok(false) => report.reused.push(id),
            Err(e) => {
                warn!("motion precompute failed for {id}: {e}");
                report.failed.push((id, e.to_string()));
            }
        }
    }
    Ok(report)
}

fn cache_matches(path: &Path, rec: &VideoRecord) -> bool {
    let Ok(bytes) = fs::read(path) else { return false };
    let dims = (rec.n_frames, rec.height, rec.width);
    matches!(decode_motion_header(&bytes, path), Ok(d) if d == dims)
        && bytes.len() == 20 + 4 * rec.n_frames * rec.height * rec.width
}

/// Loads a cached motion volume, pointing at the precompute step when absent.
pub fn load_motion(cache_dir: &Path, rec: &VideoRecord) -> Result<MotionVolume> {
    let path = cache_path(cache_dir, &rec.video_id);
    if !path.exists() {
        return Err(MclError::State(format!(
            "missing motion cache {}; run `mcl precompute-motion` first",
            path.display()
        )));
    }
    read_motion_cache(&path)
}
