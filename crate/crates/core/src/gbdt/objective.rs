//! Multiclass softmax log-loss and its per-class gradient statistics.

/// In-place softmax over one row of margins.
pub fn softmax_into(margins: &[f64], out: &mut [f64]) {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &m) in out.iter_mut().zip(margins) {
        *o = (m - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; margins.len()];
    softmax_into(margins, &mut out);
    out
}

/// `-ln softmax(margins)[label]`, computed through log-sum-exp.
pub fn log_loss(margins: &[f64], label: usize) -> f64 {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + margins.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
    lse - margins[label]
}

/// Gradient and hessian of the log-loss w.r.t. the class-`k` margin:
/// `g = p_k - [label == k]`, `h = max(2 p_k (1 - p_k), floor)`.
#[inline]
pub fn grad_hess(p_k: f64, is_label: bool, hessian_floor: f64) -> (f64, f64) {
    let g = p_k - if is_label { 1.0 } else { 0.0 };
    let h = (2.0 * p_k * (1.0 - p_k)).max(hessian_floor);
    (g, h)
}
