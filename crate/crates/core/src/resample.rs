//! Separable 1D resampling weights shared by augmentation, loss-side motion
//! pooling and evaluation.

/// For each output cell, `(input index, weight)` pairs.
pub type Weights = Vec<Vec<(usize, f64)>>;

/// Coverage-weighted block average: output cell `j` averages the input span
/// `[j·n_in/n_out, (j+1)·n_in/n_out)`, weighting partially covered cells by
/// their overlap. Exact block means when `n_out` divides `n_in`.
pub fn area_weights(n_in: usize, n_out: usize) -> Weights {
    assert!(n_in > 0 && n_out > 0, "empty resampling axis");
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
            let mut out = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    out.push((i, overlap / scale));
                }
                i += 1;
            }
            out
        })
        .collect()
}

/// Linear interpolation between pixel centers (half-pixel aligned), clamped
/// at the borders.
pub fn bilinear_weights(n_in: usize, n_out: usize) -> Weights {
    assert!(n_in > 0 && n_out > 0, "empty resampling axis");
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let f = x - i0 as f64;
            if i1 == i0 || f == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

/// Applies row/column weights to a `h×w×c` interleaved image.
pub fn resize_2d(src: &[f32], h: usize, w: usize, c: usize, rows: &Weights, cols: &Weights) -> Vec<f32> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut tmp = vec![0.0f64; h * ow * c];
    for y in 0..h {
        for (x, ws) in cols.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * ow + x) * c + ch] = ws.iter().map(|&(i, wt)| wt * src[(y * w + i) * c + ch] as f64).sum();
            }
        }
    }
    let mut out = vec![0.0f32; oh * ow * c];
    for (y, ws) in rows.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                out[(y * ow + x) * c + ch] =
                    ws.iter().map(|&(i, wt)| wt * tmp[(i * ow + x) * c + ch]).sum::<f64>() as f32;
            }
        }
    }
    out
}
