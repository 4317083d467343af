use super::TensorCHW;
use crate::error::{Error, Result};

/// Per-pixel softmax over channels, stabilized by the per-pixel maximum.
pub fn softmax(logits: &TensorCHW) -> TensorCHW {
    let (k, h, w) = logits.shape();
    let n = h * w;
    let mut prob = TensorCHW::zeros(k, h, w);
    for p in 0..n {
        let mut mx = f32::NEG_INFINITY;
        for c in 0..k {
            mx = mx.max(logits.data[c * n + p]);
        }
        let mut z = 0.0f64;
        for c in 0..k {
            z += ((logits.data[c * n + p] - mx) as f64).exp();
        }
        for c in 0..k {
            prob.data[c * n + p] = (((logits.data[c * n + p] - mx) as f64).exp() / z) as f32;
        }
    }
    prob
}

/// Softmax followed by the mean negative log-likelihood of the true class
/// over all pixels.
pub fn softmax_cross_entropy(logits: &TensorCHW, labels: &[u8]) -> Result<(f64, TensorCHW)> {
    let (k, h, w) = logits.shape();
    let n = h * w;
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {h}x{w} logits",
            labels.len()
        )));
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= k) {
        return Err(Error::InvalidLabel { value, index });
    }
    let prob = softmax(logits);
    let mut total = 0.0f64;
    for (p, &l) in labels.iter().enumerate() {
        let mut mx = f32::NEG_INFINITY;
        for c in 0..k {
            mx = mx.max(logits.data[c * n + p]);
        }
        let z: f64 = (0..k)
            .map(|c| ((logits.data[c * n + p] - mx) as f64).exp())
            .sum();
        let lse = mx as f64 + z.ln();
        total += lse - logits.data[l as usize * n + p] as f64;
    }
    Ok((total / n as f64, prob))
}

/// `(p − onehot) · scale`; with `scale = 1/N` this is the gradient of the mean loss.
pub fn softmax_cross_entropy_backward(prob: &TensorCHW, labels: &[u8], scale: f32) -> TensorCHW {
    let n = prob.plane();
    let mut g = prob.clone();
    for (p, &l) in labels.iter().enumerate() {
        g.data[l as usize * n + p] -= 1.0;
    }
    g.scale(scale);
    g
}
