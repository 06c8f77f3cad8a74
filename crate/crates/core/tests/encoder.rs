use mcl_autograd::check::{agreement, numeric_gradient};
use mcl_autograd::{Tape, Tensor};
use mcl_core::encoder::{clip_batch, Encoder, EncoderConfig, Mode, NormKind, INPUT_MEAN, INPUT_STD};
use mcl_core::motionfield::Frame;
use mcl_core::rng::stream_rng;
use mcl_core::validate::Validate;
use mcl_core::MclError;
use proptest::prelude::*;
use rand::Rng;

fn toy() -> EncoderConfig {
    EncoderConfig {
        in_channels: 3,
        input_frames: 8,
        input_size: (56, 56),
        widths: vec![4, 6, 8],
        spatial_strides: vec![2, 2, 2],
        temporal_strides: vec![1, 2, 1],
        head_hidden: 16,
        embed_dim: 128,
        ..EncoderConfig::default()
    }
}

fn tiny(norm: NormKind) -> EncoderConfig {
    EncoderConfig {
        in_channels: 2,
        input_frames: 4,
        input_size: (6, 6),
        widths: vec![2, 2],
        spatial_strides: vec![2, 1],
        temporal_strides: vec![1, 2],
        head_hidden: 4,
        embed_dim: 3,
        norm,
        ..EncoderConfig::default()
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 99);
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

fn with_batch(cfg: &EncoderConfig, b: usize) -> Vec<usize> {
    let mut s = vec![b];
    s.extend(cfg.input_shape());
    s
}

#[test]
fn toy_shapes_and_unit_embeddings() {
    let cfg = toy();
    assert_eq!(cfg.feature_shape(), (8, 4, 7, 7));
    let enc = Encoder::new(cfg.clone(), &mut stream_rng(1, 0)).unwrap();
    let tape = Tape::new();
    let p = enc.bind(&tape, true);
    let x = tape.constant(random_input(&with_batch(&cfg, 2), 3));
    let f = enc.forward(&p, x, Mode::Train).unwrap();
    assert_eq!(f.features.shape(), vec![2, 8, 4, 7, 7]);
    assert_eq!(f.pooled.shape(), vec![2, 8]);
    assert_eq!(f.embedding.shape(), vec![2, 128]);
    for row in f.embedding.value().data().chunks(128) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5, "norm {n}");
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let cfg = toy();
    let enc = Encoder::new(cfg.clone(), &mut stream_rng(1, 0)).unwrap();
    let x = random_input(&with_batch(&cfg, 1), 4);
    let run = || {
        let tape = Tape::new();
        let p = enc.bind(&tape, false);
        let f = enc.forward(&p, tape.constant(x.clone()), Mode::Eval).unwrap();
        (f.features.value().as_ref().clone(), f.embedding.value().as_ref().clone())
    };
    assert_eq!(run(), run());
    let again = Encoder::new(cfg, &mut stream_rng(1, 0)).unwrap();
    assert_eq!(again, enc);
}

#[test]
fn pooled_is_mean_of_final_activations() {
    // Fresh batch norm is the identity up to 1/sqrt(1 + eps) in eval mode, so
    // the pooled vector is the cell mean of relu(features / sqrt(1 + eps)).
    let cfg = toy();
    let enc = Encoder::new(cfg.clone(), &mut stream_rng(2, 0)).unwrap();
    let tape = Tape::new();
    let p = enc.bind(&tape, false);
    let f = enc.forward(&p, tape.constant(random_input(&with_batch(&cfg, 2), 5)), Mode::Eval).unwrap();
    let h = f.features.value();
    let pooled = f.pooled.value();
    let [b, c, t, hh, ww] = h.shape().try_into().unwrap();
    let scale = 1.0 / (1.0 + cfg.norm_eps).sqrt();
    for bi in 0..b {
        for ci in 0..c {
            let mut acc = 0.0;
            for ti in 0..t {
                for y in 0..hh {
                    for x in 0..ww {
                        let v = h.data()[(((bi * c + ci) * t + ti) * hh + y) * ww + x];
                        acc += (v * scale).max(0.0);
                    }
                }
            }
            let want = acc / (t * hh * ww) as f64;
            assert!((pooled.data()[bi * c + ci] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn backbone_accepts_larger_frames() {
    let cfg = toy();
    let enc = Encoder::new(cfg, &mut stream_rng(2, 0)).unwrap();
    let clip: Vec<Frame> = (0..8).map(|i| Frame::from_fn(64, 64, 3, |y, x, c| ((i + y + x + c) % 5) as f32 / 4.0).unwrap()).collect();
    let feats = enc.backbone_features(&[&clip, &clip]).unwrap();
    assert_eq!(feats.shape(), &[2, 8]);
    assert_eq!(feats.data()[..8], feats.data()[8..]);
    let odd: Vec<Frame> = (0..8).map(|_| Frame::from_fn(60, 60, 3, |_, _, _| 0.5).unwrap()).collect();
    assert!(matches!(enc.backbone_features(&[&odd]), Err(MclError::Input(_))));
}

#[test]
fn clip_batch_standardizes_and_replicates_gray() {
    let gray: Vec<Frame> = (0..2).map(|i| Frame::from_fn(8, 8, 1, |y, x, _| ((i * 64 + y * 8 + x) % 17) as f32 / 16.0).unwrap()).collect();
    let t = clip_batch(&[&gray], 3).unwrap();
    assert_eq!(t.shape(), &[1, 3, 2, 8, 8]);
    for c in 0..3 {
        for k in 0..128 {
            let want = ((k % 17) as f64 / 16.0 - INPUT_MEAN) / INPUT_STD;
            assert!((t.data()[c * 128 + k] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for norm in [NormKind::Batch, NormKind::Group { groups: 1 }] {
        let cfg = tiny(norm);
        let enc = Encoder::new(cfg.clone(), &mut stream_rng(3, 0)).unwrap();
        let x = random_input(&with_batch(&cfg, 2), 6);
        let r = random_input(&[2, 3], 7);
        let loss = |params: &[Tensor]| {
            let tape = Tape::new();
            let p: Vec<_> = params.iter().map(|t| tape.param(t.clone())).collect();
            let f = enc.forward(&p, tape.constant(x.clone()), Mode::Train).unwrap();
            let l = f.embedding.mul(tape.constant(r.clone())).sum_all();
            let g = tape.grad(l, &p, false);
            (l.item(), g.iter().map(|v| v.value().as_ref().clone()).collect::<Vec<_>>())
        };
        let (_, analytic) = loss(&enc.params);
        let (mut ok, mut total) = (0.0, 0usize);
        for i in 0..enc.params.len() {
            let numeric = numeric_gradient(&enc.params[i], 1e-6, |t| {
                let mut ps = enc.params.clone();
                ps[i] = t.clone();
                loss(&ps).0
            });
            ok += agreement(&analytic[i], &numeric, 1e-3, 1e-8) * numeric.numel() as f64;
            total += numeric.numel();
        }
        assert!(ok / total as f64 >= 0.99, "{norm:?}: agreement {}", ok / total as f64);
    }
}

#[test]
fn group_norm_keeps_samples_independent() {
    let cfg = tiny(NormKind::Group { groups: 2 });
    let enc = Encoder::new(cfg.clone(), &mut stream_rng(4, 0)).unwrap();
    let a = random_input(&with_batch(&cfg, 2), 8);
    let mut b = a.clone();
    let half = b.numel() / 2;
    b.data_mut()[half..].iter_mut().for_each(|v| *v = -*v * 2.0);
    let emb = |x: &Tensor| {
        let tape = Tape::new();
        let p = enc.bind(&tape, false);
        enc.forward(&p, tape.constant(x.clone()), Mode::Train).unwrap().embedding.value().data()[..3].to_vec()
    };
    assert_eq!(emb(&a), emb(&b));
}

#[test]
fn running_statistics_follow_momentum_rule() {
    let cfg = tiny(NormKind::Batch);
    let mut enc = Encoder::new(cfg.clone(), &mut stream_rng(5, 0)).unwrap();
    let tape = Tape::new();
    let p = enc.bind(&tape, false);
    let f = enc.forward(&p, tape.constant(random_input(&with_batch(&cfg, 2), 9)), Mode::Train).unwrap();
    let (mean, var, n) = f.stats.0[0].clone();
    enc.apply_stats(&f.stats);
    let m = cfg.bn_momentum;
    for c in 0..2 {
        assert!((enc.buffers[0].data()[c] - m * mean.data()[c]).abs() < 1e-15);
        let unbiased = var.data()[c] * n as f64 / (n - 1) as f64;
        assert!((enc.buffers[1].data()[c] - ((1.0 - m) + m * unbiased)).abs() < 1e-12);
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let cfg = EncoderConfig { input_size: (30, 30), ..EncoderConfig::default() };
    let err = Encoder::new(cfg, &mut stream_rng(0, 0)).unwrap_err();
    match err {
        MclError::Validation(errs) => assert!(errs.iter().any(|e| e.path == "spatial_strides")),
        other => panic!("unexpected {other:?}"),
    }
    let bad_groups = EncoderConfig { norm: NormKind::Group { groups: 3 }, ..EncoderConfig::default() };
    assert!(bad_groups.validate().is_err());
}

#[test]
fn paper_scale_record() {
    let cfg = EncoderConfig::paper_scale();
    assert_eq!(cfg.input_frames, 16);
    assert_eq!(cfg.input_size, (224, 224));
    assert_eq!(cfg.embed_dim, 128);
    assert_eq!(*cfg.widths.last().unwrap(), 2048);
    cfg.validate().unwrap();
    assert_eq!(cfg.feature_shape(), (2048, 2, 7, 7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_follow_strides(
        stages in 1usize..4,
        widths in proptest::collection::vec(1usize..5, 3),
        ss in proptest::collection::vec(1usize..3, 3),
        ts in proptest::collection::vec(1usize..3, 3),
        tmul in 1usize..3,
        smul in 1usize..3,
        b in 1usize..3,
    ) {
        let sp: Vec<usize> = ss[..stages].to_vec();
        let tp: Vec<usize> = ts[..stages].to_vec();
        let sprod: usize = sp.iter().product();
        let tprod: usize = tp.iter().product();
        let cfg = EncoderConfig {
            in_channels: 1,
            input_frames: tprod * tmul,
            input_size: (sprod * smul * 2, sprod * smul),
            widths: widths[..stages].to_vec(),
            spatial_strides: sp,
            temporal_strides: tp,
            head_hidden: 3,
            embed_dim: 5,
            ..EncoderConfig::default()
        };
        let enc = Encoder::new(cfg.clone(), &mut stream_rng(6, 0)).unwrap();
        let tape = Tape::new();
        let p = enc.bind(&tape, false);
        let f = enc.forward(&p, tape.constant(random_input(&with_batch(&cfg, b), 10)), Mode::Train).unwrap();
        let (c, t, h, w) = cfg.feature_shape();
        prop_assert_eq!(f.features.shape(), vec![b, c, t, h, w]);
        prop_assert_eq!(f.embedding.shape(), vec![b, 5]);
    }
}
