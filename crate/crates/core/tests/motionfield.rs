use mcl_core::motionfield::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Periodic sinusoid texture; a circular shift of it is exactly the same
/// texture displaced, so the generator knows the true flow.
fn periodic_texture(size: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f32, f32, f32, f32)> = (0..8)
        .map(|_| {
            let kx = rng.random_range(1..9) as f32;
            let ky = rng.random_range(1..9) as f32;
            (kx, ky, rng.random_range(0.0..std::f32::consts::TAU), rng.random_range(0.3..1.0))
        })
        .collect();
    let total: f32 = waves.iter().map(|w| w.3).sum();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(kx, ky, ph, a) in &waves {
                let arg = std::f32::consts::TAU * (kx * x as f32 + ky * y as f32) / size as f32 + ph;
                v += a * arg.sin();
            }
            out.push(0.5 + 0.45 * v / total);
        }
    }
    out
}

fn shifted(tex: &[f32], size: usize, dx: i32, dy: i32) -> Frame {
    let s = size as i32;
    Frame::from_fn(size, size, 1, |y, x, _| {
        let sy = (y as i32 - dy).rem_euclid(s) as usize;
        let sx = (x as i32 - dx).rem_euclid(s) as usize;
        tex[sy * size + sx]
    })
    .unwrap()
}

fn interior_stats(flow: &FlowPair, margin: usize, tu: f32, tv: f32) -> (f64, f64, f64) {
    let (h, w) = (flow.height(), flow.width());
    let (mut mu, mut mv, mut epe, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let u = flow.u.at(y, x);
            let v = flow.v.at(y, x);
            mu += u as f64;
            mv += v.abs() as f64;
            epe += ((u - tu).powi(2) + (v - tv).powi(2)).sqrt() as f64;
            n += 1.0;
        }
    }
    (mu / n, mv / n, epe / n)
}

#[test]
fn identical_frames_give_zero_flow() {
    let tex = periodic_texture(64, 1);
    let f = shifted(&tex, 64, 0, 0);
    let flow = tvl1_flow(&f, &f, &Tvl1Params::default()).unwrap();
    assert!(flow.u.data.iter().all(|v| v.abs() < 0.1));
    assert!(flow.v.data.iter().all(|v| v.abs() < 0.1));
}

#[test]
fn horizontal_two_pixel_shift() {
    let tex = periodic_texture(64, 2);
    let a = shifted(&tex, 64, 0, 0);
    let b = shifted(&tex, 64, 2, 0);
    let flow = tvl1_flow(&a, &b, &Tvl1Params::default()).unwrap();
    let (mean_u, mean_abs_v, _) = interior_stats(&flow, 8, 2.0, 0.0);
    assert!((1.5..=2.5).contains(&mean_u), "mean u {mean_u}");
    assert!(mean_abs_v < 0.5, "mean |v| {mean_abs_v}");
}

#[test]
fn diagonal_one_pixel_shift() {
    let tex = periodic_texture(64, 3);
    let a = shifted(&tex, 64, 0, 0);
    let b = shifted(&tex, 64, 1, 1);
    let flow = tvl1_flow(&a, &b, &Tvl1Params::default()).unwrap();
    let (_, _, epe) = interior_stats(&flow, 8, 1.0, 1.0);
    assert!(epe < 0.5, "endpoint error {epe}");
}

#[test]
fn color_frames_are_reduced_to_luminance() {
    let tex = periodic_texture(64, 4);
    let gray = shifted(&tex, 64, 0, 0);
    let color = Frame::from_fn(64, 64, 3, |y, x, _| gray.at(y, x, 0)).unwrap();
    let gray_next = shifted(&tex, 64, 1, 0);
    let color_next = Frame::from_fn(64, 64, 3, |y, x, _| gray_next.at(y, x, 0)).unwrap();
    let p = Tvl1Params::default();
    let a = tvl1_flow(&gray, &gray_next, &p).unwrap();
    let b = tvl1_flow(&color, &color_next, &p).unwrap();
    for (x, y) in a.u.data.iter().zip(&b.u.data) {
        assert!((x - y).abs() < 1e-3);
    }
}

#[test]
fn solver_is_deterministic_and_validates_inputs() {
    let tex = periodic_texture(64, 5);
    let a = shifted(&tex, 64, 0, 0);
    let b = shifted(&tex, 64, -1, 2);
    let p = Tvl1Params::default();
    let f1 = tvl1_flow(&a, &b, &p).unwrap();
    let f2 = tvl1_flow(&a, &b, &p).unwrap();
    assert_eq!(f1, f2);

    let small = Frame::from_fn(32, 32, 1, |_, _, _| 0.5).unwrap();
    assert!(matches!(tvl1_flow(&small, &small, &p), Err(mcl_core::MclError::Config(_))));
    let other = Frame::from_fn(64, 48, 1, |_, _, _| 0.5).unwrap();
    assert!(matches!(tvl1_flow(&a, &other, &p), Err(mcl_core::MclError::Shape(_))));
}

#[test]
fn energy_does_not_increase_across_finest_warps() {
    for seed in 0..4 {
        let tex = periodic_texture(64, 10 + seed);
        let a = shifted(&tex, 64, 0, 0);
        let b = shifted(&tex, 64, 1 + seed as i32 % 2, -(seed as i32 % 3));
        let (_, trace) = tvl1_flow_traced(&a, &b, &Tvl1Params::default()).unwrap();
        let e = &trace.finest_level_energy;
        assert_eq!(e.len(), Tvl1Params::default().warps_per_level);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "energy rose: {e:?}");
        }
    }
}

#[test]
fn flow_sequence_length_and_duplicated_tail() {
    let tex = periodic_texture(64, 6);
    let p = Tvl1Params::default();
    let video: Vec<Frame> = (0..2).map(|i| shifted(&tex, 64, i, 0)).collect();
    let seq = flow_sequence(&video, &p).unwrap();
    assert_eq!(seq.len(), 2);
    assert_eq!(seq.flows[1], seq.flows[0]);

    let static_video: Vec<Frame> = (0..5).map(|_| shifted(&tex, 64, 0, 0)).collect();
    let seq = flow_sequence(&static_video, &p).unwrap();
    assert_eq!(seq.len(), 5);
    for f in &seq.flows {
        assert!(f.u.data.iter().chain(&f.v.data).all(|v| v.abs() < 0.1));
    }

    let video: Vec<Frame> = (0..10).map(|i| shifted(&tex, 64, i % 2, 0)).collect();
    let seq = flow_sequence(&video, &p).unwrap();
    assert_eq!(seq.len(), 10);
    assert_eq!(seq.flows[9], seq.flows[8]);

    assert!(matches!(flow_sequence(&video[..1], &p), Err(mcl_core::MclError::Input(_))));
}

/// Independent per-pixel stencil with explicit replicate padding.
fn stencil_oracle(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (p.height as isize, p.width as isize);
    let get = |y: isize, x: isize| p.at(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize) as f64;
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    for y in 0..h {
        for x in 0..w {
            dx.push((get(y, x + 1) - get(y, x - 1)) / 2.0);
            dy.push((get(y + 1, x) - get(y - 1, x)) / 2.0);
        }
    }
    (dx, dy)
}

#[test]
fn random_boundary_matches_stencil_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let u = Plane::from_fn(7, 7, |_, _| rng.random_range(-3.0..3.0));
    let v = Plane::from_fn(7, 7, |_, _| rng.random_range(-3.0..3.0));
    let flow = FlowPair::new(u.clone(), v.clone()).unwrap();
    let b = motion_boundary(&flow);
    let (ux, uy) = stencil_oracle(&u);
    let (vx, vy) = stencil_oracle(&v);
    let m = motion_map(&flow);
    for k in 0..49 {
        assert_eq!(b.du_dx.data[k], ux[k] as f32);
        assert_eq!(b.du_dy.data[k], uy[k] as f32);
        assert_eq!(b.dv_dx.data[k], vx[k] as f32);
        assert_eq!(b.dv_dy.data[k], vy[k] as f32);
        let expect = (ux[k].powi(2) + uy[k].powi(2) + vx[k].powi(2) + vy[k].powi(2)).sqrt();
        assert!((m.data[k] as f64 - expect).abs() <= 1e-6 * expect.max(1.0));
    }
}

#[test]
fn volume_pools_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, h, w) = (5, 6, 7);
    let st: Vec<f32> = (0..n * h * w).map(|_| rng.random_range(0.0..4.0)).collect();
    let vol = MotionVolume::from_st(n, h, w, st.clone()).unwrap();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for i in 0..n {
                acc += st[i * h * w + y * w + x] as f64;
            }
            assert!((vol.s().at(y, x) as f64 - acc / n as f64).abs() < 1e-6);
        }
    }
    for i in 0..n {
        let mut acc = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                acc += st[i * h * w + y * w + x] as f64;
            }
        }
        assert!((vol.t()[i] as f64 - acc / (h * w) as f64).abs() < 1e-6);
    }
    let mean_st = st.iter().map(|&v| v as f64).sum::<f64>() / st.len() as f64;
    let mean_s = vol.s().mean();
    let mean_t = vol.t().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    assert!((mean_s - mean_st).abs() < 1e-6 && (mean_t - mean_st).abs() < 1e-6);
}

#[test]
fn build_volume_from_flows() {
    let ramp = FlowPair::new(Plane::from_fn(8, 8, |_, x| x as f32), Plane::zeros(8, 8)).unwrap();
    let seq = FlowSequence::from_pair_flows(vec![FlowPair::zeros(8, 8), ramp]).unwrap();
    let vol = build_motion_volume(&seq).unwrap();
    assert_eq!(vol.frames(), 3);
    assert!(vol.frame(0).iter().all(|&v| v == 0.0));
    assert_eq!(vol.t()[0], 0.0);
    assert_eq!(vol.t()[1], 0.875);
    assert_eq!(vol.t()[1], vol.t()[2]);
}

#[test]
fn motion_cache_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let st: Vec<f32> = (0..3 * 8 * 9).map(|_| rng.random_range(0.0..10.0)).collect();
    let vol = MotionVolume::from_st(3, 8, 9, st).unwrap();
    let path = dir.path().join("v.mclm");
    write_motion_cache(&path, &vol).unwrap();
    let back = read_motion_cache(&path).unwrap();
    assert_eq!(back.st(), vol.st());
    assert_eq!(back, vol);
}

proptest! {
    #[test]
    fn motion_map_ignores_camera_translation(
        a in -64i32..64, b in -64i32..64, c in -64i32..64,
        du in -256i32..256, dv in -256i32..256,
    ) {
        // Dyadic coefficients keep every sum exact in f32.
        let u = Plane::from_fn(9, 11, |y, x| (a * x as i32 + b * (y * y) as i32) as f32 / 64.0);
        let v = Plane::from_fn(9, 11, |y, x| (c * (x * y) as i32) as f32 / 32.0);
        let f = FlowPair::new(u, v).unwrap();
        let shifted = f.translated(du as f32 / 16.0, dv as f32 / 16.0);
        prop_assert_eq!(motion_map(&f), motion_map(&shifted));
    }

    #[test]
    fn motion_map_is_nonnegative(vals in proptest::collection::vec(-1e3f32..1e3, 2 * 64)) {
        let u = Plane::new(8, 8, vals[..64].to_vec()).unwrap();
        let v = Plane::new(8, 8, vals[64..].to_vec()).unwrap();
        let m = motion_map(&FlowPair::new(u, v).unwrap());
        prop_assert!(m.data.iter().all(|&x| x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn normalization_is_idempotent(vals in proptest::collection::vec(0.0f64..100.0, 1..50)) {
        let once = l2_normalize_map(&vals);
        prop_assume!(!once.zero);
        let twice = l2_normalize_map(&once.values);
        for (x, y) in once.values.iter().zip(&twice.values) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let norm: f64 = once.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }
}
