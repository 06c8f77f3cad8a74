//! Raw tensor kernels. Nothing here knows about the tape.

use crate::tensor::{numel, strides_of, Tensor};

/// Walks the row-major index space of `shape` in contiguous rows of the last
/// dimension, tracking the offset into a second tensor whose per-dimension
/// strides are `other_strides` (0 along broadcast/reduced dimensions).
fn for_each_row(shape: &[usize], other_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let last = rank - 1;
    let inner = shape[last];
    let rows = numel(&shape[..last]);
    let mut idx = vec![0usize; last];
    let mut other = 0usize;
    for row in 0..rows {
        f(row * inner, other);
        for d in (0..last).rev() {
            idx[d] += 1;
            other += other_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            other -= other_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

fn masked_strides(full: &[usize], small: &[usize]) -> Vec<usize> {
    assert_eq!(full.len(), small.len(), "broadcast requires equal rank: {full:?} vs {small:?}");
    let st = strides_of(small);
    (0..full.len())
        .map(|i| {
            assert!(
                small[i] == full[i] || small[i] == 1,
                "shape {small:?} is not broadcastable to {full:?}"
            );
            if small[i] == 1 {
                0
            } else {
                st[i]
            }
        })
        .collect()
}

/// Sums `x` down to `out_shape` (same rank, each dim either kept or 1).
pub fn reduce_to(x: &Tensor, out_shape: &[usize]) -> Tensor {
    let eff = masked_strides(x.shape(), out_shape);
    let mut out = vec![0.0; numel(out_shape)];
    let rank = x.ndim();
    if rank == 0 {
        return Tensor::new(out_shape, x.data().to_vec());
    }
    let inner = x.shape()[rank - 1];
    let inner_reduced = eff[rank - 1] == 0;
    let data = x.data();
    for_each_row(x.shape(), &eff, |src, dst| {
        let row = &data[src..src + inner];
        if inner_reduced {
            out[dst] += row.iter().sum::<f64>();
        } else {
            for (o, v) in out[dst..dst + inner].iter_mut().zip(row) {
                *o += v;
            }
        }
    });
    Tensor::new(out_shape, out)
}

/// Expands `x` (dims of size 1) to `shape`.
pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    let eff = masked_strides(shape, x.shape());
    let mut out = vec![0.0; numel(shape)];
    let rank = shape.len();
    if rank == 0 {
        return x.clone();
    }
    let inner = shape[rank - 1];
    let inner_bcast = eff[rank - 1] == 0;
    let data = x.data();
    for_each_row(shape, &eff, |dst, src| {
        let row = &mut out[dst..dst + inner];
        if inner_bcast {
            row.fill(data[src]);
        } else {
            row.copy_from_slice(&data[src..src + inner]);
        }
    });
    Tensor::new(shape, out)
}

/// `c (+)= op(a) · op(b)` for row-major operands; `m×k` times `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // in-bounds row-major (or transposed) layouts of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.ndim(), 2, "matmul lhs must be 2-D, got {:?}", a.shape());
    assert_eq!(b.ndim(), 2, "matmul rhs must be 2-D, got {:?}", b.shape());
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?}", a.shape(), b.shape());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    assert_eq!(a.ndim(), 2, "transpose expects 2-D, got {:?}", a.shape());
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(&[c, r], out)
}

/// Stride and zero-padding of a 3-D convolution over (T, H, W).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { stride, padding }
    }

    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.padding[i];
            assert!(
                padded >= kernel[i],
                "kernel {kernel:?} larger than padded input {input:?}"
            );
            out[i] = (padded - kernel[i]) / self.stride[i] + 1;
        }
        out
    }
}

struct ConvDims {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
}

impl ConvDims {
    fn new(x_shape: &[usize], w_shape: &[usize], geom: &ConvGeometry) -> Self {
        assert_eq!(x_shape.len(), 5, "conv input must be [B, C, T, H, W], got {x_shape:?}");
        assert_eq!(w_shape.len(), 5, "conv weight must be [Co, Ci, kt, kh, kw], got {w_shape:?}");
        assert_eq!(
            x_shape[1], w_shape[1],
            "conv channel mismatch: input {x_shape:?} weight {w_shape:?}"
        );
        let input = [x_shape[2], x_shape[3], x_shape[4]];
        let kernel = [w_shape[2], w_shape[3], w_shape[4]];
        Self {
            batch: x_shape[0],
            cin: x_shape[1],
            cout: w_shape[0],
            input,
            kernel,
            output: geom.output_dims(input, kernel),
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn n_out(&self) -> usize {
        self.output.iter().product()
    }

    fn n_in(&self) -> usize {
        self.input.iter().product()
    }

    fn y_shape(&self) -> [usize; 5] {
        [self.batch, self.cout, self.output[0], self.output[1], self.output[2]]
    }
}

/// Calls `f(row, col_offset_range_start, in_index)` for every in-bounds tap.
fn for_each_tap(dims: &ConvDims, geom: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let [kt, kh, kw] = dims.kernel;
    let [it, ih, iw] = dims.input;
    let [ot, oh, ow] = dims.output;
    let [st, sh, sw] = geom.stride;
    let [pt, ph, pw] = geom.padding;
    let n = dims.n_out();
    for ci in 0..dims.cin {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((ci * kt + dt) * kh + dh) * kw + dw;
                    for ot_i in 0..ot {
                        let t = (ot_i * st + dt) as isize - pt as isize;
                        if t < 0 || t >= it as isize {
                            continue;
                        }
                        for oh_i in 0..oh {
                            let h = (oh_i * sh + dh) as isize - ph as isize;
                            if h < 0 || h >= ih as isize {
                                continue;
                            }
                            let in_row = ((ci * it + t as usize) * ih + h as usize) * iw;
                            let col_row = row * n + (ot_i * oh + oh_i) * ow;
                            for ow_i in 0..ow {
                                let w = (ow_i * sw + dw) as isize - pw as isize;
                                if w < 0 || w >= iw as isize {
                                    continue;
                                }
                                f(row, col_row + ow_i, in_row + w as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col(dims: &ConvDims, geom: &ConvGeometry, x_b: &[f64], col: &mut [f64]) {
    col.fill(0.0);
    for_each_tap(dims, geom, |_, c, i| col[c] = x_b[i]);
}

fn col2im(dims: &ConvDims, geom: &ConvGeometry, col: &[f64], x_b: &mut [f64]) {
    for_each_tap(dims, geom, |_, c, i| x_b[i] += col[c]);
}

fn is_pointwise(dims: &ConvDims, geom: &ConvGeometry) -> bool {
    dims.kernel == [1, 1, 1] && geom.stride == [1, 1, 1] && geom.padding == [0, 0, 0]
}

/// Cross-correlation `y[b, co] = Σ_ci w[co, ci] ⋆ x[b, ci]`.
pub fn conv3d(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Tensor {
    let dims = ConvDims::new(x.shape(), w.shape(), geom);
    let (k, n, n_in) = (dims.k(), dims.n_out(), dims.n_in());
    let mut y = vec![0.0; numel(&dims.y_shape())];
    let mut col = vec![0.0; k * n];
    let pointwise = is_pointwise(&dims, geom);
    for b in 0..dims.batch {
        let x_b = &x.data()[b * dims.cin * n_in..(b + 1) * dims.cin * n_in];
        let y_b = &mut y[b * dims.cout * n..(b + 1) * dims.cout * n];
        if pointwise {
            gemm(dims.cout, k, n, w.data(), false, x_b, false, y_b, false);
        } else {
            im2col(&dims, geom, x_b, &mut col);
            gemm(dims.cout, k, n, w.data(), false, &col, false, y_b, false);
        }
    }
    Tensor::new(&dims.y_shape(), y)
}

/// Adjoint of [`conv3d`] in its input argument.
pub fn conv3d_input_grad(gy: &Tensor, w: &Tensor, x_shape: &[usize], geom: &ConvGeometry) -> Tensor {
    let dims = ConvDims::new(x_shape, w.shape(), geom);
    assert_eq!(gy.shape(), dims.y_shape(), "conv input-grad: upstream shape mismatch");
    let (k, n, n_in) = (dims.k(), dims.n_out(), dims.n_in());
    let mut gx = vec![0.0; numel(x_shape)];
    let mut col = vec![0.0; k * n];
    let pointwise = is_pointwise(&dims, geom);
    for b in 0..dims.batch {
        let gy_b = &gy.data()[b * dims.cout * n..(b + 1) * dims.cout * n];
        let gx_b = &mut gx[b * dims.cin * n_in..(b + 1) * dims.cin * n_in];
        if pointwise {
            gemm(k, dims.cout, n, w.data(), true, gy_b, false, gx_b, false);
        } else {
            gemm(k, dims.cout, n, w.data(), true, gy_b, false, &mut col, false);
            col2im(&dims, geom, &col, gx_b);
        }
    }
    Tensor::new(x_shape, gx)
}

/// Adjoint of [`conv3d`] in its weight argument.
pub fn conv3d_weight_grad(x: &Tensor, gy: &Tensor, w_shape: &[usize], geom: &ConvGeometry) -> Tensor {
    let dims = ConvDims::new(x.shape(), w_shape, geom);
    assert_eq!(gy.shape(), dims.y_shape(), "conv weight-grad: upstream shape mismatch");
    let (k, n, n_in) = (dims.k(), dims.n_out(), dims.n_in());
    let mut gw = vec![0.0; numel(w_shape)];
    let mut col = vec![0.0; k * n];
    let pointwise = is_pointwise(&dims, geom);
    for b in 0..dims.batch {
        let x_b = &x.data()[b * dims.cin * n_in..(b + 1) * dims.cin * n_in];
        let gy_b = &gy.data()[b * dims.cout * n..(b + 1) * dims.cout * n];
        if pointwise {
            gemm(dims.cout, n, k, gy_b, false, x_b, true, &mut gw, true);
        } else {
            im2col(&dims, geom, x_b, &mut col);
            gemm(dims.cout, n, k, gy_b, false, &col, true, &mut gw, true);
        }
    }
    Tensor::new(w_shape, gw)
}
