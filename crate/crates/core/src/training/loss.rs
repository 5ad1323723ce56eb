use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits, `(softmax − onehot) / n`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 || labels.len() != s.n {
        return Err(Error::InvalidShape(format!(
            "cross entropy needs n x classes x 1 x 1 logits and n labels, got {s} and {}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= s.c) {
        return Err(Error::InvalidLabel { label, classes: s.c });
    }
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    let scale = 1.0 / s.n as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * s.c..(i + 1) * s.c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        total += log_sum - (row[label] - max);
        let g = &mut grad.data_mut()[i * s.c..(i + 1) * s.c];
        for (k, (gk, z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - max - log_sum).exp();
            *gk = (p - if k == label { 1.0 } else { 0.0 }) * scale;
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("cross entropy"));
    }
    Ok((total * scale, grad))
}
