use mcl_autograd::check::{agreement, numeric_gradient};
use mcl_autograd::{ConvGeometry, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

type Scalar = dyn for<'t> Fn(Var<'t>) -> Var<'t>;

fn hr<F: for<'t> Fn(Var<'t>) -> Var<'t>>(f: F) -> F {
    f
}

/// First-order check: `f` maps a parameter var to a scalar var.
fn check_first_order(x0: &Tensor, f: &Scalar) {
    let tape = Tape::new();
    let x = tape.param(x0.clone());
    let y = f(x);
    let g = tape.grad(y, &[x], false)[0].value();
    let numeric = numeric_gradient(x0, 1e-6, |p| {
        let t = Tape::new();
        f(t.constant(p.clone())).item()
    });
    let frac = agreement(&g, &numeric, 1e-5, 1e-8);
    assert!(frac == 1.0, "analytic {:?} numeric {:?}", g, numeric);
}

/// Second-order check: d/dx <grad f(x), v> against finite differences of the
/// first-order gradient.
fn check_second_order(x0: &Tensor, v0: &Tensor, f: &Scalar) {
    let tape = Tape::new();
    let x = tape.param(x0.clone());
    let g = tape.grad(f(x), &[x], true)[0];
    let v = tape.constant(v0.clone());
    let inner = g.mul(v).sum_all();
    let hv = tape.grad(inner, &[x], false)[0].value();
    let numeric = numeric_gradient(x0, 1e-5, |p| {
        let t = Tape::new();
        let xp = t.param(p.clone());
        let gp = t.grad(f(xp), &[xp], false)[0].value();
        gp.dot(v0)
    });
    let frac = agreement(&hv, &numeric, 1e-4, 1e-7);
    assert!(frac == 1.0, "hvp {:?} numeric {:?}", hv, numeric);
}

#[test]
fn elementwise_ops_first_and_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Tensor::from_fn(&[3, 4], |_| rng.random_range(0.5..1.5));
    let v0 = random(&[3, 4], &mut rng);
    let c0 = random(&[3, 4], &mut rng);
    let fs: Vec<Box<Scalar>> = vec![
        Box::new(|x: Var<'_>| x.square().sum_all()),
        Box::new(|x: Var<'_>| x.sqrt().mul(x).sum_all()),
        Box::new(|x: Var<'_>| x.exp().scale(0.3).sum_all()),
        Box::new(|x: Var<'_>| x.ln().square().sum_all()),
        Box::new(|x: Var<'_>| x.div(x.add_scalar(2.0)).sum_all()),
        Box::new(move |x: Var<'_>| {
            let c = x.tape().constant(c0.clone());
            x.sub(c).square().mul(x).sum_all()
        }),
    ];
    for f in &fs {
        check_first_order(&x0, f.as_ref());
        check_second_order(&x0, &v0, f.as_ref());
    }
}

#[test]
fn reductions_and_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = random(&[2, 3, 4], &mut rng);
    let v0 = random(&[2, 3, 4], &mut rng);
    let f = hr(|x| {
        let m = x.mean_axes(&[0, 2]);
        let c = x.sub(m);
        let var = c.square().mean_axes(&[0, 2]).add_scalar(1e-3);
        c.div(var.sqrt()).mul(x).sum_all()
    });
    check_first_order(&x0, &f);
    check_second_order(&x0, &v0, &f);
}

#[test]
fn matmul_and_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = random(&[3, 4], &mut rng);
    let w0 = random(&[4, 2], &mut rng);
    let v0 = random(&[3, 4], &mut rng);
    let f = hr(move |x| {
        let w = x.tape().constant(w0.clone());
        let y = x.matmul(w);
        y.square().matmul(y.transpose()).sum_all()
    });
    check_first_order(&x0, &f);
    check_second_order(&x0, &v0, &f);
}

#[test]
fn convolution_family_twice_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geom = ConvGeometry::new([1, 2, 2], [1, 1, 1]);
    let x0 = random(&[2, 2, 3, 5, 5], &mut rng);
    let w0 = random(&[3, 2, 3, 3, 3], &mut rng);
    let vx = random(&[2, 2, 3, 5, 5], &mut rng);
    let vw = random(&[3, 2, 3, 3, 3], &mut rng);

    // In the input.
    let w_fixed = w0.clone();
    let fx = hr(move |x| {
        let w = x.tape().constant(w_fixed.clone());
        x.conv3d(w, geom).square().sum_all()
    });
    check_first_order(&x0, &fx);
    check_second_order(&x0, &vx, &fx);

    // In the weight.
    let x_fixed = x0.clone();
    let fw = hr(move |w| {
        let x = w.tape().constant(x_fixed.clone());
        x.conv3d(w, geom).relu().square().sum_all()
    });
    check_first_order(&w0, &fw);
    check_second_order(&w0, &vw, &fw);
}

#[test]
fn mixed_partials_through_input_gradient() {
    // d/dw of <d(loss)/dx, v>: exercises ConvInputGrad's weight branch and
    // ConvWeightGrad's input branch.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let geom = ConvGeometry::new([2, 1, 1], [1, 0, 0]);
    let x0 = random(&[1, 2, 4, 3, 3], &mut rng);
    let w0 = random(&[2, 2, 3, 1, 1], &mut rng);
    let v0 = random(&[1, 2, 4, 3, 3], &mut rng);
    let objective = |t: &Tape, w: &Tensor, create: bool| -> (f64, Option<Tensor>) {
        let x = t.param(x0.clone());
        let wv = t.param(w.clone());
        let y = x.conv3d(wv, geom).square().sum_all();
        let gx = t.grad(y, &[x], create)[0];
        let s = gx.mul(t.constant(v0.clone())).sum_all();
        let gw = create.then(|| t.grad(s, &[wv], false)[0].value().as_ref().clone());
        (s.item(), gw)
    };
    let tape = Tape::new();
    let analytic = objective(&tape, &w0, true).1.unwrap();
    let numeric = numeric_gradient(&w0, 1e-6, |w| objective(&Tape::new(), w, false).0);
    assert_eq!(agreement(&analytic, &numeric, 1e-5, 1e-8), 1.0);
}

#[test]
fn no_grad_and_unreachable_targets() {
    let tape = Tape::new();
    let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0]));
    let y = tape.no_grad(|| x.square().sum_all());
    assert!(!y.requires_grad());
    let z = x.square().sum_all();
    let w = tape.param(Tensor::new(&[3], vec![1.0; 3]));
    let gs = tape.grad(z, &[x, w], false);
    assert_eq!(gs[0].value().data(), &[2.0, 4.0]);
    assert_eq!(gs[1].value().data(), &[0.0; 3]);
    assert!(!gs[0].requires_grad());

    // Gradient of a detached-gradient expression is zero.
    let g = tape.grad(z, &[x], false)[0];
    let s = g.square().sum_all();
    let back = tape.grad(s, &[x], false)[0];
    assert_eq!(back.value().data(), &[0.0, 0.0]);
}

proptest! {
    #[test]
    fn broadcast_then_sum_scales_by_fanout(vals in proptest::collection::vec(-10.0f64..10.0, 6), k in 1usize..5) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 1, 3], vals.clone()));
        let y = x.broadcast_to(&[2, k, 3]).sum_to(&[2, 1, 3]);
        for (a, b) in y.value().data().iter().zip(&vals) {
            prop_assert!((a - b * k as f64).abs() < 1e-9);
        }
    }
}
