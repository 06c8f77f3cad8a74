use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use mcl_core::evalkit::{
    clip_indices, clip_mask, eval_clip, extract_split, linear_probe, mask_ratio, overlay, retrieval, saliency,
    upsample, SplitFeatures,
};
use mcl_core::motionfield::write_atomic;
use mcl_core::synthdata::{build_corpus, precompute_motion, write_png, Dataset, Split};
use mcl_core::train::{encoder_from_checkpoint, run_pretrain, Checkpoint, RunConfig, TrainData, LAST_CHECKPOINT};
use mcl_core::{MclError, Result};

const CORPUS_ECHO: &str = "corpus.json";

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| MclError::io(dir, e))?;
    }
    write_atomic(path, &serde_json::to_vec_pretty(value).expect("json serializes"))?;
    println!("{}", path.display());
    Ok(())
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if !cfg.data_dir.join("manifest.json").exists() {
        return Err(MclError::State(format!(
            "no corpus at {}; run `mcl gen-data` first",
            cfg.data_dir.display()
        )));
    }
    Dataset::open(&cfg.data_dir)
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CorpusEcho {
    hash: String,
    seed: u64,
    corpus: mcl_core::synthdata::CorpusConfig,
}

pub(crate) fn gen_data(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let corpus_json = serde_json::to_vec(&(&cfg.corpus, seed)).expect("config serializes");
    let echo = CorpusEcho { hash: hex(&corpus_json), seed, corpus: cfg.corpus.clone() };
    let echo_path = cfg.data_dir.join(CORPUS_ECHO);
    if cfg.data_dir.join("manifest.json").exists() {
        let existing: Option<CorpusEcho> =
            std::fs::read(&echo_path).ok().and_then(|b| serde_json::from_slice(&b).ok());
        return match existing {
            Some(e) if e.hash == echo.hash => {
                info!("corpus at {} is up to date", cfg.data_dir.display());
                println!("{}", cfg.data_dir.display());
                Ok(())
            }
            _ => Err(MclError::State(format!(
                "{} holds a different corpus; choose another --out or remove it",
                cfg.data_dir.display()
            ))),
        };
    }
    let ds = build_corpus(&cfg.data_dir, &cfg.corpus, seed)?;
    write_json(&echo_path, &serde_json::to_value(&echo).expect("json serializes"))?;
    info!("{} videos, {} classes", ds.manifest.records.len(), ds.manifest.num_classes);
    Ok(())
}

pub(crate) fn precompute(cfg: &RunConfig, force: bool) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let report = precompute_motion(&ds, &cfg.flow, &cfg.cache_dir(), force)?;
    let summary = json!({
        "cache_dir": cfg.cache_dir(),
        "written": report.written.len(),
        "reused": report.reused.len(),
        "failed": report.failed,
        "flow": cfg.flow,
    });
    println!("{summary}");
    if report.failed.is_empty() {
        Ok(())
    } else {
        Err(MclError::State(format!("{} videos failed; see the log above", report.failed.len())))
    }
}

pub(crate) fn pretrain(cfg: &RunConfig, grid: bool, resume: bool) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let data = TrainData::load(&ds, &cfg.cache_dir(), Split::Train)?;
    let arms = if grid { cfg.ablation_grid() } else { vec![("run", cfg.clone())] };
    for (arm, c) in arms {
        let outcome = run_pretrain(&c, &data, &c.output_dir, resume)?;
        println!(
            "{}",
            json!({
                "arm": arm,
                "output_dir": c.output_dir,
                "steps": outcome.steps,
                "finished": outcome.finished,
                "checkpoint": outcome.checkpoint,
                "metrics": outcome.metrics,
                "config_hash": c.content_hash(),
            })
        );
    }
    Ok(())
}

struct Loaded {
    encoder: mcl_core::encoder::Encoder,
    path: PathBuf,
    sha256: String,
    step: usize,
}

fn load_checkpoint(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<Loaded> {
    let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(LAST_CHECKPOINT));
    if !path.exists() {
        return Err(MclError::State(format!("no checkpoint at {}; run `mcl pretrain` first", path.display())));
    }
    let bytes = std::fs::read(&path).map_err(|e| MclError::io(&path, e))?;
    let ckpt = Checkpoint::decode(&bytes).map_err(|e| match e {
        MclError::Format { msg, .. } => MclError::format(&path, msg),
        other => other,
    })?;
    let encoder = encoder_from_checkpoint(cfg, &ckpt)?;
    Ok(Loaded { encoder, path, sha256: hex(&bytes), step: ckpt.header.step })
}

fn features(cfg: &RunConfig, ck: &Loaded) -> Result<(SplitFeatures, SplitFeatures)> {
    let ds = open_dataset(cfg)?;
    let stride = cfg.sampler.clip_stride;
    let train = extract_split(&ck.encoder, &ds, Split::Train, stride, &cfg.probe)?;
    let test = extract_split(&ck.encoder, &ds, Split::Test, stride, &cfg.probe)?;
    Ok((train, test))
}

fn provenance(cfg: &RunConfig, ck: &Loaded) -> serde_json::Value {
    json!({
        "seed": cfg.seed,
        "checkpoint": {"path": ck.path, "sha256": ck.sha256, "step": ck.step},
        "config_hash": cfg.content_hash(),
        "config": cfg,
    })
}

pub(crate) fn probe(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let (train, test) = features(cfg, &ck)?;
    let accuracy = linear_probe(&train.features, &train.labels, &test.features, &test.labels, &cfg.probe)?;
    let mut out = json!({"protocol": cfg.probe, "accuracy": accuracy, "test_videos": test.ids.len()});
    merge_into(&mut out, provenance(cfg, &ck));
    write_json(&cfg.output_dir.join("probe.json"), &out)
}

pub(crate) fn retrieve(cfg: &RunConfig, checkpoint: Option<PathBuf>, ks: &[usize]) -> Result<()> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let (train, test) = features(cfg, &ck)?;
    let r = retrieval(&test.features, &test.labels, &train.features, &train.labels, ks)?;
    let recalls: serde_json::Map<String, serde_json::Value> =
        r.recalls.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let mut out = json!({"protocol": cfg.probe, "recalls": recalls});
    merge_into(&mut out, provenance(cfg, &ck));
    write_json(&cfg.output_dir.join("retrieval.json"), &out)
}

pub(crate) fn visualize(cfg: &RunConfig, checkpoint: Option<PathBuf>, videos: &[String]) -> Result<()> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let ds = open_dataset(cfg)?;
    let length = cfg.encoder.input_frames;
    for id in videos {
        let rec = ds
            .manifest
            .records
            .iter()
            .find(|r| &r.video_id == id)
            .ok_or_else(|| MclError::Input(format!("video {id:?} is not in the manifest")))?;
        let video = ds.load_video(rec)?;
        let idx = clip_indices(video.len(), length, cfg.sampler.clip_stride, 1).remove(0);
        let clip = eval_clip(&video, &idx, cfg.probe.crop)?;
        let sal = saliency(&ck.encoder, &clip)?;
        let dir = cfg.output_dir.join("saliency").join(id);
        for (j, frame) in clip.iter().enumerate() {
            write_png(&dir.join(format!("overlay_{j:02}.png")), &overlay(frame, &sal)?)?;
        }
        let ratio = match ds.load_ground_truth(rec) {
            Ok(gt) => {
                let mask = clip_mask(&gt, &idx, cfg.probe.crop)?;
                mask_ratio(&upsample(&sal, clip[0].height(), clip[0].width()), &mask)
            }
            Err(_) => None,
        };
        let mut out = json!({
            "video_id": id,
            "frames": idx,
            "height": sal.height,
            "width": sal.width,
            "saliency": sal.values,
            "mask_ratio": ratio,
        });
        merge_into(&mut out, provenance(cfg, &ck));
        write_json(&dir.join("saliency.json"), &out)?;
    }
    Ok(())
}

fn merge_into(out: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(o), serde_json::Value::Object(e)) = (out.as_object_mut(), extra) {
        o.extend(e);
    }
}
