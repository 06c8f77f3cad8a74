//! Central finite differences, used to validate analytic gradients.

use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x` with step `eps`.
pub fn numeric_gradient(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    out
}

/// Whether an analytic and a numeric derivative agree to relative `rtol`,
/// with `atol` as the floor below which both count as zero.
pub fn agrees(analytic: f64, numeric: f64, rtol: f64, atol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= atol || diff <= rtol * analytic.abs().max(numeric.abs())
}

/// Fraction of entries for which [`agrees`] holds.
pub fn agreement(analytic: &Tensor, numeric: &Tensor, rtol: f64, atol: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    if analytic.numel() == 0 {
        return 1.0;
    }
    let ok = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .filter(|(&a, &n)| agrees(a, n, rtol, atol))
        .count();
    ok as f64 / analytic.numel() as f64
}
