use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use mcl_core::malign::MalVariant;
use mcl_core::synthdata::{build_corpus, precompute_motion, Dataset, Split};
use mcl_core::train::{
    encoder_from_checkpoint, read_metrics, run_pretrain, trajectory_hash, Checkpoint, RunConfig, TrainData, Trainer,
};
use mcl_core::validate::Validate;
use mcl_core::MclError;

fn small_config(root: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.seed = Some(3);
    c.data_dir = root.join("data");
    c.corpus.scene.height = 32;
    c.corpus.scene.width = 32;
    c.corpus.scene.frames = 16;
    c.corpus.scene.radius = (4.0, 6.0);
    c.corpus.scene.speeds = vec![0.5, 0.75];
    c.flow.pyramid_levels = 3;
    c.corpus.train_per_class = 1;
    c.corpus.test_per_class = 1;
    c.sampler.crop_size = 16;
    c.encoder.input_size = (16, 16);
    c.encoder.widths = vec![4, 8];
    c.encoder.spatial_strides = vec![2, 2];
    c.encoder.temporal_strides = vec![1, 2];
    c.encoder.head_hidden = 16;
    c.encoder.embed_dim = 8;
    c.contrast.batch_size = 4;
    c.contrast.queue_size = 16;
    c.train.epochs = 2;
    c
}

struct Fixture {
    root: PathBuf,
    cfg: RunConfig,
    ds: Dataset,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("train_fixture");
        let _ = std::fs::remove_dir_all(&root);
        let cfg = small_config(&root);
        let ds = build_corpus(&cfg.data_dir, &cfg.corpus, 1).unwrap();
        let report = precompute_motion(&ds, &cfg.flow, &cfg.cache_dir(), false).unwrap();
        assert!(report.failed.is_empty(), "{:?}", report.failed);
        Fixture { root, cfg, ds }
    })
}

fn run_dir(name: &str) -> PathBuf {
    let dir = fixture().root.join("runs").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn percentile_override_names_the_field() {
    let mut c = RunConfig::desk();
    c.seed = Some(0);
    c.set("sampler.percentile_q=120").unwrap();
    let Err(MclError::Validation(errs)) = c.validate() else { panic!("expected validation failure") };
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].path, "sampler.percentile_q");
}

#[test]
fn seed_is_mandatory() {
    let c = RunConfig::desk();
    let Err(MclError::Validation(errs)) = c.validate() else { panic!("expected validation failure") };
    assert!(errs.iter().any(|e| e.path == "seed"));
    assert!(c.seed().is_err());
}

#[test]
fn overrides_parse_json_and_reject_unknown_paths() {
    let mut c = RunConfig::desk();
    c.set("train.learning_rate=0.05").unwrap();
    c.set("mal.variant=v3").unwrap();
    c.set("encoder.widths=[4,8]").unwrap();
    c.set("output_dir=runs/x").unwrap();
    assert_eq!(c.train.learning_rate, 0.05);
    assert_eq!(c.mal.variant, MalVariant::V3);
    assert_eq!(c.encoder.widths, vec![4, 8]);
    assert_eq!(c.output_dir, PathBuf::from("runs/x"));

    let Err(MclError::Validation(errs)) = c.set("train.lr=1") else { panic!("unknown field accepted") };
    assert_eq!(errs[0].path, "train.lr");
    assert!(matches!(c.set("mal.variant=v9"), Err(MclError::Validation(_))));
    assert!(matches!(c.set("no-equals-sign"), Err(MclError::Config(_))));
    assert!(RunConfig::preset("huge").is_err());

    let mut tiny = RunConfig::desk();
    tiny.seed = Some(0);
    tiny.set("corpus.scene.height=32").unwrap();
    let Err(MclError::Validation(errs)) = tiny.validate() else { panic!("pyramid too deep for 32 px accepted") };
    assert!(errs.iter().any(|e| e.path == "flow.pyramid_levels"));
}

#[test]
fn presets_validate_and_hash_tracks_content() {
    for name in ["desk", "paper-scale"] {
        let mut c = RunConfig::preset(name).unwrap();
        c.seed = Some(1);
        c.validate().unwrap();
    }
    let p = RunConfig::paper_scale();
    assert_eq!(p.contrast.queue_size, 131_072);
    assert_eq!((p.sampler.clip_length, p.sampler.crop_size), (16, 224));
    assert_eq!(p.probe.clips_per_video, 20);

    let a = RunConfig::desk();
    let mut b = a.clone();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.content_hash().len(), 64);
    b.contrast.tau = 0.2;
    assert_ne!(a.content_hash(), b.content_hash());
    // Interruption settings do not change the trajectory.
    let mut c = a.clone();
    c.train.max_steps = Some(3);
    c.train.checkpoint_every = 1;
    assert_eq!(trajectory_hash(&a), trajectory_hash(&c));
    assert_ne!(trajectory_hash(&a), trajectory_hash(&b));
}

#[test]
fn ablation_grid_arms() {
    let mut base = RunConfig::desk();
    base.mal.variant = MalVariant::V1;
    let grid = base.ablation_grid();
    let arms: Vec<_> = grid.iter().map(|(a, _)| *a).collect();
    assert_eq!(arms, ["baseline", "ta_sa", "ta_sa_mal"]);
    let flags: Vec<_> = grid
        .iter()
        .map(|(_, c)| (c.sampler.temporal_sampling, c.sampler.spatial_cropping, c.mal.variant))
        .collect();
    assert_eq!(flags, [(false, false, MalVariant::None), (true, true, MalVariant::None), (true, true, MalVariant::Full)]);
    assert_eq!(grid[2].1.output_dir, base.output_dir.join("ta_sa_mal"));
}

#[test]
fn partial_config_files_keep_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
    let c = RunConfig::load(&path).unwrap();
    assert_eq!(c.seed, Some(9));
    assert_eq!(c.train.epochs, 3);
    assert_eq!(c.train.learning_rate, RunConfig::desk().train.learning_rate);
    std::fs::write(&path, r#"{"seed": 9, "trian": {}}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
}

#[test]
fn cosine_schedule_and_step_count() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let t = Trainer::new(&f.cfg, &data).unwrap();
    assert_eq!(t.total_steps(), (8 / 4) * 2);
    assert_eq!(t.learning_rate(0), f.cfg.train.learning_rate);
    assert!((t.learning_rate(2) - 0.5 * f.cfg.train.learning_rate).abs() < 1e-15);
    assert!(t.learning_rate(4).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let mut t = Trainer::new(&f.cfg, &data).unwrap();
    t.step().unwrap();
    let ck = t.checkpoint();
    let bytes = ck.encode();
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.encode(), bytes);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(Checkpoint::decode(&flipped).is_err());
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::decode(b"MCLX").is_err());

    let enc = encoder_from_checkpoint(&f.cfg, &back).unwrap();
    assert_eq!(enc.params, t.encoder.params);
}

#[test]
fn identical_runs_give_identical_logs() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let a = run_pretrain(&f.cfg, &data, &run_dir("det_a"), false).unwrap();
    let b = run_pretrain(&f.cfg, &data, &run_dir("det_b"), false).unwrap();
    assert!(a.finished);
    let (ma, mb) = (read_metrics(&a.metrics).unwrap(), read_metrics(&b.metrics).unwrap());
    assert_eq!(ma.len(), 4);
    assert_eq!(ma, mb);
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    assert!(ma.iter().all(|m| m.mal.is_some() && m.loss.is_finite()));
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let full = run_pretrain(&f.cfg, &data, &run_dir("resume_full"), false).unwrap();

    let dir = run_dir("resume_cut");
    let mut cut = f.cfg.clone();
    cut.train.max_steps = Some(1);
    let first = run_pretrain(&cut, &data, &dir, false).unwrap();
    assert_eq!((first.steps, first.finished), (1, false));
    // A second fresh start into the same directory would clobber it.
    assert!(matches!(run_pretrain(&f.cfg, &data, &dir, false), Err(MclError::State(_))));
    let rest = run_pretrain(&f.cfg, &data, &dir, true).unwrap();
    assert!(rest.finished);
    assert_eq!(read_metrics(&rest.metrics).unwrap(), read_metrics(&full.metrics).unwrap());

    let mut other = f.cfg.clone();
    other.contrast.tau = 0.5;
    assert!(matches!(run_pretrain(&other, &data, &dir, true), Err(MclError::State(_))));
}

#[test]
fn no_mal_variant_is_plain_contrastive() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let mut cfg = f.cfg.clone();
    cfg.mal.variant = MalVariant::None;
    let mut t = Trainer::new(&cfg, &data).unwrap();
    let m = t.step().unwrap();
    assert_eq!(m.mal, None);
    assert_eq!(m.loss, m.nce);
    assert!(m.mal_components.is_empty());
}

#[test]
fn missing_motion_cache_points_at_precompute() {
    let f = fixture();
    let empty = f.root.join("no-cache");
    let err = TrainData::load(&f.ds, &empty, Split::Train).err().expect("missing caches accepted");
    assert!(err.to_string().contains("precompute-motion"), "{err}");
}

#[test]
fn batch_larger_than_corpus_is_rejected() {
    let f = fixture();
    let data = TrainData::load(&f.ds, &f.cfg.cache_dir(), Split::Train).unwrap();
    let mut cfg = f.cfg.clone();
    cfg.contrast.batch_size = 16;
    cfg.contrast.queue_size = 32;
    assert!(Trainer::new(&cfg, &data).is_err());
}
