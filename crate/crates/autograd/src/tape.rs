use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sqrt(usize),
    Exp(usize),
    Ln(usize),
    SumTo(usize),
    Broadcast(usize),
    Reshape(usize),
    Transpose(usize),
    MatMul(usize, usize),
    Conv { x: usize, w: usize, geom: ConvGeometry },
    ConvInputGrad { gy: usize, w: usize, geom: ConvGeometry },
    ConvWeightGrad { x: usize, gy: usize, geom: ConvGeometry },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![a, b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Relu(a) | Sqrt(a) | Exp(a) | Ln(a) | SumTo(a)
            | Broadcast(a) | Reshape(a) | Transpose(a) => vec![a],
            Conv { x, w, .. } => vec![x, w],
            ConvInputGrad { gy, w, .. } => vec![gy, w],
            ConvWeightGrad { x, gy, .. } => vec![x, gy],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Every op applied to a [`Var`] appends a node. Gradients are obtained with
/// [`Tape::grad`]; when `create_graph` is set the backward computation is
/// itself recorded, so its results can be differentiated again.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: Cell::new(true) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Runs `f` with recording disabled: every value produced inside is a
    /// constant, regardless of its inputs.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    fn push(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let (op, requires_grad) = if requires_grad { (op, true) } else { (Op::Leaf, false) };
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(Rc::new(value), op, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Targets that `output` does not depend on get a zero gradient. With
    /// `create_graph` the returned vars carry their own history and can be
    /// used in further differentiable computation; otherwise they are
    /// constants.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Vec<Var<'t>> {
        assert!(std::ptr::eq(output.tape, self), "output belongs to another tape");
        assert_eq!(
            output.value().numel(),
            1,
            "grad() needs a scalar output, got shape {:?}",
            output.shape()
        );
        let seed = Tensor::ones(output.value().shape());
        self.grad_with_seed(output, seed, wrt, create_graph)
    }

    /// Vector-Jacobian product of `output` against `seed`.
    pub fn grad_with_seed<'t>(
        &'t self,
        output: Var<'t>,
        seed: Tensor,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Vec<Var<'t>> {
        let end = output.id + 1;
        // A node is relevant when some target is reachable from it by
        // walking towards the inputs.
        let mut relevant = vec![false; end];
        for v in wrt {
            if v.id < end {
                relevant[v.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..end {
                if !relevant[id] && nodes[id].requires_grad {
                    relevant[id] = nodes[id].op.inputs().iter().any(|&i| relevant[i]);
                }
            }
        }

        let prev = self.recording.replace(create_graph);
        let mut grads: Vec<Option<Var<'t>>> = vec![None; end];
        if relevant[output.id] {
            grads[output.id] = Some(self.constant(seed));
        }
        for id in (0..end).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let (op, requires_grad) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].requires_grad)
            };
            if !requires_grad {
                continue;
            }
            for (input, contribution) in self.vjp(id, &op, g, &relevant) {
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc.add(contribution),
                    None => contribution,
                });
            }
        }
        self.recording.set(prev);

        wrt.iter()
            .map(|v| match grads.get(v.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(v.value().shape())),
            })
            .collect()
    }

    fn vjp<'t>(&'t self, out: usize, op: &Op, g: Var<'t>, relevant: &[bool]) -> Vec<(usize, Var<'t>)> {
        let v = |id: usize| self.var(id);
        let mut res = Vec::with_capacity(2);
        let mut emit = |id: usize, f: &dyn Fn() -> Var<'t>| {
            if relevant[id] {
                res.push((id, f()));
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Op::Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g.neg());
            }
            Op::Mul(a, b) => {
                emit(a, &|| g.mul(v(b)));
                emit(b, &|| g.mul(v(a)));
            }
            Op::Div(a, b) => {
                emit(a, &|| g.div(v(b)));
                emit(b, &|| g.mul(v(out)).div(v(b)).neg());
            }
            Op::Neg(a) => emit(a, &|| g.neg()),
            Op::Scale(a, c) => emit(a, &|| g.scale(c)),
            Op::AddScalar(a) => emit(a, &|| g),
            Op::Relu(a) => emit(a, &|| {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                g.mul(self.constant(mask))
            }),
            Op::Sqrt(a) => emit(a, &|| g.div(v(out)).scale(0.5)),
            Op::Exp(a) => emit(a, &|| g.mul(v(out))),
            Op::Ln(a) => emit(a, &|| g.div(v(a))),
            Op::SumTo(a) => emit(a, &|| g.broadcast_to(self.value(a).shape())),
            Op::Broadcast(a) => emit(a, &|| g.sum_to(self.value(a).shape())),
            Op::Reshape(a) => emit(a, &|| g.reshape(self.value(a).shape())),
            Op::Transpose(a) => emit(a, &|| g.transpose()),
            Op::MatMul(a, b) => {
                emit(a, &|| g.matmul(v(b).transpose()));
                emit(b, &|| v(a).transpose().matmul(g));
            }
            Op::Conv { x, w, geom } => {
                emit(x, &|| g.conv3d_input_grad(v(w), self.value(x).shape(), geom));
                emit(w, &|| v(x).conv3d_weight_grad(g, self.value(w).shape(), geom));
            }
            Op::ConvInputGrad { gy, w, geom } => {
                emit(gy, &|| g.conv3d(v(w), geom));
                emit(w, &|| g.conv3d_weight_grad(v(gy), self.value(w).shape(), geom));
            }
            Op::ConvWeightGrad { x, gy, geom } => {
                emit(gy, &|| v(x).conv3d(g, geom));
                emit(x, &|| v(gy).conv3d_input_grad(g, self.value(x).shape(), geom));
            }
        }
        res
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "rank mismatch: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "shapes {a:?} and {b:?} do not broadcast");
            x.max(y)
        })
        .collect()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.push(self.value(), Op::Leaf, false)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.record(value, op)
    }

    /// Aligns two operands to a common shape, broadcasting size-1 dims and
    /// rank-0 scalars.
    fn aligned(self, other: Var<'t>) -> (Var<'t>, Var<'t>) {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return (self, other);
        }
        let a = if sa.is_empty() { self.reshape(&vec![1; sb.len()]) } else { self };
        let b = if sb.is_empty() { other.reshape(&vec![1; sa.len()]) } else { other };
        let target = broadcast_shape(&a.shape(), &b.shape());
        (a.broadcast_to(&target), b.broadcast_to(&target))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let value = a.value().zip_map(&b.value(), |x, y| x + y);
        self.tape.record(value, Op::Add(a.id, b.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let value = a.value().zip_map(&b.value(), |x, y| x - y);
        self.tape.record(value, Op::Sub(a.id, b.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let value = a.value().zip_map(&b.value(), |x, y| x * y);
        self.tape.record(value, Op::Mul(a.id, b.id))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let value = a.value().zip_map(&b.value(), |x, y| x / y);
        self.tape.record(value, Op::Div(a.id, b.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(self.value().map(|x| -x), Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x * c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x + c), Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(self.value().map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value().map(f64::ln), Op::Ln(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self)
    }

    /// Sums down to `shape` (same rank, each dim kept or 1).
    pub fn sum_to(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        self.unary(kernels::reduce_to(&self.value(), shape), Op::SumTo(self.id))
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(self, axes: &[usize]) -> Var<'t> {
        let mut shape = self.shape();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Var<'t> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes).scale(1.0 / count as f64)
    }

    /// Sum of all elements as a rank-0 value.
    pub fn sum_all(self) -> Var<'t> {
        let ones = vec![1; self.shape().len()];
        self.sum_to(&ones).reshape(&[])
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        self.unary(kernels::broadcast_to(&self.value(), shape), Op::Broadcast(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        if self.shape() == shape {
            return self;
        }
        let value = (*self.value()).clone().reshaped(shape);
        self.unary(value, Op::Reshape(self.id))
    }

    pub fn transpose(self) -> Var<'t> {
        self.unary(kernels::transpose(&self.value()), Op::Transpose(self.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = kernels::matmul(&self.value(), &other.value());
        self.tape.record(value, Op::MatMul(self.id, other.id))
    }

    /// 3-D cross-correlation of `[B, Ci, T, H, W]` with `[Co, Ci, kt, kh, kw]`.
    pub fn conv3d(self, weight: Var<'t>, geom: ConvGeometry) -> Var<'t> {
        let value = kernels::conv3d(&self.value(), &weight.value(), &geom);
        self.tape.record(value, Op::Conv { x: self.id, w: weight.id, geom })
    }

    /// `self` is the upstream gradient of a convolution output.
    pub fn conv3d_input_grad(self, weight: Var<'t>, x_shape: &[usize], geom: ConvGeometry) -> Var<'t> {
        let value = kernels::conv3d_input_grad(&self.value(), &weight.value(), x_shape, &geom);
        self.tape.record(value, Op::ConvInputGrad { gy: self.id, w: weight.id, geom })
    }

    /// `self` is the convolution input, `gy` the upstream gradient.
    pub fn conv3d_weight_grad(self, gy: Var<'t>, w_shape: &[usize], geom: ConvGeometry) -> Var<'t> {
        let value = kernels::conv3d_weight_grad(&self.value(), &gy.value(), w_shape, &geom);
        self.tape.record(value, Op::ConvWeightGrad { x: self.id, gy: gy.id, geom })
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $impl:ident) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::$impl(self, rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
