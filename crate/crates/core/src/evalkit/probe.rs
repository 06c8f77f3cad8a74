use serde::{Deserialize, Serialize};

use super::features::ProbeProtocol;
use crate::error::{MclError, Result};

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `classes` rows of `dim + 1` (bias last).
    pub weights: Vec<Vec<f64>>,
}

fn softmax_in_place(z: &mut [f64]) {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - top).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

impl LinearProbe {
    /// Convex full-batch gradient descent from zero weights, so the result
    /// depends only on the data and the protocol.
    pub fn fit(x: &[Vec<f64>], y: &[u32], protocol: &ProbeProtocol) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(MclError::Input(format!("{} feature rows for {} labels", x.len(), y.len())));
        }
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
            return Err(MclError::Input("feature rows must be non-empty, equally long and finite".into()));
        }
        let classes = *y.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; classes];
        y.iter().for_each(|&l| seen[l as usize] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(MclError::Input("linear probe needs at least two distinct classes".into()));
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = r.iter().zip(&mean).zip(&scale).map(|((a, m), s)| (a - m) * s).collect();
                v.push(1.0);
                v
            })
            .collect();
        let mut w = vec![vec![0.0; dim + 1]; classes];
        let mut grad = vec![vec![0.0; dim + 1]; classes];
        let mut p = vec![0.0; classes];
        for _ in 0..protocol.epochs {
            grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for (row, &label) in xs.iter().zip(y) {
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk = w[k].iter().zip(row).map(|(a, b)| a * b).sum();
                }
                softmax_in_place(&mut p);
                for k in 0..classes {
                    let e = p[k] - if k == label as usize { 1.0 } else { 0.0 };
                    for (g, v) in grad[k].iter_mut().zip(row) {
                        *g += e * v / n;
                    }
                }
            }
            for (wk, gk) in w.iter_mut().zip(&grad) {
                for j in 0..=dim {
                    // The bias is not regularized.
                    let reg = if j < dim { protocol.l2 * wk[j] } else { 0.0 };
                    wk[j] -= protocol.learning_rate * (gk[j] + reg);
                }
            }
        }
        Ok(Self { mean, scale, weights: w })
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        let mut v: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((a, m), s)| (a - m) * s).collect();
        v.push(1.0);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, wk) in self.weights.iter().enumerate() {
            let z: f64 = wk.iter().zip(&v).map(|(a, b)| a * b).sum();
            if z > best.1 {
                best = (k, z);
            }
        }
        best.0 as u32
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[u32]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}

/// Test top-1 accuracy of a probe trained on the train split.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[u32],
    test_x: &[Vec<f64>],
    test_y: &[u32],
    protocol: &ProbeProtocol,
) -> Result<f64> {
    if test_x.is_empty() || test_x.len() != test_y.len() {
        return Err(MclError::Input("test set must be non-empty with one label per row".into()));
    }
    let probe = LinearProbe::fit(train_x, train_y, protocol)?;
    if test_x.iter().any(|r| r.len() != probe.mean.len()) {
        return Err(MclError::Input("test features differ in dimension from train features".into()));
    }
    Ok(probe.accuracy(test_x, test_y))
}
