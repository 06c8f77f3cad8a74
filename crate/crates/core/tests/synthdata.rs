use std::collections::BTreeMap;
use std::fs;

use mcl_core::motionfield::{motion_map, read_motion_cache, Frame, Tvl1Params};
use mcl_core::synthdata::*;
use mcl_core::MclError;

fn spec() -> SceneSpec {
    SceneSpec {
        height: 48,
        width: 48,
        frames: 6,
        channels: 3,
        object: ObjectSpec { shape: Shape::Disk, radius: 7.0, edge: 1.0 },
        start: (16.0, 24.0),
        velocity: (2.0, 0.0),
        pan: (0.0, 0.0),
        label: 0,
        seed: 11,
    }
}

#[test]
fn zero_motion_gives_zero_flow() {
    let mut s = spec();
    s.velocity = (0.0, 0.0);
    let (_, gt) = generate(&s).unwrap();
    for f in &gt.flow.flows {
        assert!(f.u.data.iter().chain(&f.v.data).all(|&v| v == 0.0));
    }
}

#[test]
fn flow_is_velocity_inside_mask_and_zero_outside() {
    let (frames, gt) = generate(&spec()).unwrap();
    assert_eq!(frames.len(), 6);
    assert_eq!(gt.flow.len(), 6);
    // The last flow repeats the previous one by convention.
    assert_eq!(gt.flow.flows[5], gt.flow.flows[4]);
    for i in 0..5 {
        let mask = gt.mask_frame(i);
        assert!(mask.iter().any(|&m| m));
        let f = &gt.flow.flows[i];
        for (k, &m) in mask.iter().enumerate() {
            let expect = if m { (2.0, 0.0) } else { (0.0, 0.0) };
            assert_eq!((f.u.data[k], f.v.data[k]), expect);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&spec()).unwrap();
    let b = generate(&spec()).unwrap();
    assert_eq!(a, b);
    let mut other = spec();
    other.seed = 12;
    assert_ne!(generate(&other).unwrap().0, a.0);
}

#[test]
fn camera_pan_shifts_background_flow_without_changing_motion_maps() {
    let base = spec();
    assert_eq!(add_camera_pan(&base, (0.0, 0.0)).unwrap(), base);
    let panned = add_camera_pan(&base, (1.0, 0.0)).unwrap();
    let (_, gt0) = generate(&base).unwrap();
    let (_, gt1) = generate(&panned).unwrap();
    for i in 0..gt1.flow.len() - 1 {
        let f = &gt1.flow.flows[i];
        for (k, &m) in gt1.mask_frame(i).iter().enumerate() {
            if !m {
                assert_eq!((f.u.data[k], f.v.data[k]), (1.0, 0.0));
            }
        }
        // Removing the pan is a constant shift, invisible to the motion map.
        assert_eq!(motion_map(f), motion_map(&f.translated(-1.0, 0.0)));
    }
    // Both scenes share the frame-0 layout, so the maps agree outright.
    assert_eq!(motion_map(&gt1.flow.flows[0]), motion_map(&gt0.flow.flows[0]));
}

fn psnr_of_warp(prev: &Frame, next: &Frame, u: &[f32], v: &[f32], margin: usize) -> f64 {
    let (h, w, c) = (prev.height(), prev.width(), prev.channels());
    let mut se = 0.0f64;
    let mut n = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (fx, fy) = (x as f32 + u[y * w + x], y as f32 + v[y * w + x]);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
            for ch in 0..c {
                let s = next.at(y0, x0, ch) * (1.0 - ax) * (1.0 - ay)
                    + next.at(y0, x0 + 1, ch) * ax * (1.0 - ay)
                    + next.at(y0 + 1, x0, ch) * (1.0 - ax) * ay
                    + next.at(y0 + 1, x0 + 1, ch) * ax * ay;
                se += ((s - prev.at(y, x, ch)) as f64).powi(2);
                n += 1;
            }
        }
    }
    10.0 * (1.0 / (se / n as f64)).log10()
}

#[test]
fn warping_by_true_flow_reproduces_next_frame() {
    let cfg = SceneConfig::default();
    let mut rng = mcl_core::rng::stream_rng(5, 0);
    for label in 0..cfg.num_classes() as u32 {
        let s = cfg.sample(label, &mut rng).unwrap();
        let (frames, gt) = generate(&s).unwrap();
        for i in (0..frames.len() - 1).step_by(7) {
            let f = &gt.flow.flows[i];
            let p = psnr_of_warp(&frames[i], &frames[i + 1], &f.u.data, &f.v.data, 3);
            assert!(p > 30.0, "label {label} frame {i}: PSNR {p:.1} dB");
        }
    }
}

fn small_corpus_cfg() -> CorpusConfig {
    let mut cfg = CorpusConfig { train_per_class: 2, test_per_class: 1, ..Default::default() };
    cfg.scene.frames = 6;
    cfg.scene.radius = (5.0, 6.0);
    cfg
}

#[test]
fn corpus_round_trip_and_balance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_corpus(dir.path(), &small_corpus_cfg(), 3).unwrap();
    assert_eq!(ds.manifest.records.len(), 8 * 3);
    let reloaded = Dataset::open(dir.path()).unwrap();
    assert_eq!(reloaded.manifest, ds.manifest);
    let mut hist = BTreeMap::new();
    for r in ds.records(Split::Train) {
        *hist.entry(r.label).or_insert(0) += 1;
    }
    assert_eq!(hist.len(), 8);
    assert!(hist.values().all(|&c| c == 2));

    // PNG frames decode to the generator output up to 8-bit quantization.
    let rec = &ds.manifest.records[3];
    let frames = ds.load_video(rec).unwrap();
    let gt = ds.load_ground_truth(rec).unwrap();
    assert_eq!(gt.label, rec.label);
    assert_eq!(frames.len(), rec.n_frames);

    // Same seed, same corpus, byte for byte.
    let dir2 = tempfile::tempdir().unwrap();
    build_corpus(dir2.path(), &small_corpus_cfg(), 3).unwrap();
    for r in &ds.manifest.records {
        let a = fs::read(ds.frame_dir(r).join(frame_file_name(2))).unwrap();
        let b = fs::read(dir2.path().join(&r.frame_dir).join(frame_file_name(2))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn precompute_is_idempotent_and_tracks_objects() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_corpus(dir.path(), &small_corpus_cfg(), 4).unwrap();
    let cache = dir.path().join("motion");
    let params = Tvl1Params::default();
    let first = precompute_motion(&ds, &params, &cache, false).unwrap();
    assert!(first.failed.is_empty(), "{:?}", first.failed);
    assert_eq!(first.written.len(), 24);
    let snapshot: Vec<Vec<u8>> = ds
        .manifest
        .records
        .iter()
        .map(|r| fs::read(cache_path(&cache, &r.video_id)).unwrap())
        .collect();
    let again = precompute_motion(&ds, &params, &cache, false).unwrap();
    assert_eq!(again.reused.len(), 24);
    let forced = precompute_motion(&ds, &params, &cache, true).unwrap();
    assert_eq!(forced.written.len(), 24);
    for (r, before) in ds.manifest.records.iter().zip(&snapshot) {
        assert_eq!(&fs::read(cache_path(&cache, &r.video_id)).unwrap(), before);
    }

    let mut ratios = Vec::new();
    for r in &ds.manifest.records {
        let vol = read_motion_cache(&cache_path(&cache, &r.video_id)).unwrap();
        assert_eq!((vol.frames(), vol.height(), vol.width()), (r.n_frames, r.height, r.width));
        let gt = ds.load_ground_truth(r).unwrap();
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..vol.frames() {
            for (m, &v) in gt.mask_frame(i).iter().zip(vol.frame(i)) {
                if *m {
                    inside += v as f64;
                    ni += 1.0;
                } else {
                    outside += v as f64;
                    no += 1.0;
                }
            }
        }
        ratios.push((inside / ni) / (outside / no));
    }
    assert!(ratios.iter().all(|&r| r > 2.0), "inside/outside ratios {ratios:?}");
}

#[test]
fn precompute_records_corrupt_videos_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_corpus(dir.path(), &small_corpus_cfg(), 5).unwrap();
    let victim = &ds.manifest.records[0];
    fs::write(ds.frame_dir(victim).join(frame_file_name(1)), b"not a png").unwrap();
    let report = precompute_motion(&ds, &Tvl1Params::default(), &dir.path().join("m"), false).unwrap();
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].0, victim.video_id);
    assert_eq!(report.written.len(), 23);
    let missing = load_motion(&dir.path().join("m"), victim).unwrap_err();
    assert!(matches!(missing, MclError::State(ref m) if m.contains("precompute-motion")));
}
