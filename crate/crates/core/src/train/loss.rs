use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean over the batch.
    pub loss: f64,
    /// d loss / d logits, same dims as the logits.
    pub grad: Tensor,
    /// Samples whose arg-max logit equals the target.
    pub correct: usize,
}

/// Smoothed target: `1 - eps` on the true class, `eps / (K - 1)` on each other class.
pub fn smoothed_target(target: usize, classes: usize, epsilon: f64) -> Vec<f64> {
    if classes == 1 {
        return vec![1.0];
    }
    let off = epsilon / (classes - 1) as f64;
    (0..classes)
        .map(|k| if k == target { 1.0 - epsilon } else { off })
        .collect()
}

/// Cross-entropy of softmax(logits) against the smoothed targets.
pub fn label_smoothing_loss(logits: &Tensor, targets: &[usize], epsilon: f64) -> Result<LossOutput> {
    let d = logits.dims();
    let (n, k) = (d.n, d.c * d.plane());
    if targets.len() != n {
        return Err(Error::shape(
            "label_smoothing_loss",
            format!("{} targets for logits {d}", targets.len()),
        ));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("label smoothing {epsilon} not in [0, 1)")));
    }
    if let Some((index, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(Error::InvalidTarget {
            index,
            target,
            classes: k,
        });
    }
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    let mut correct = 0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let q = smoothed_target(t, k, epsilon);
        let mut best = 0;
        for j in 0..k {
            let logp = row[j] - lse;
            total -= q[j] * logp;
            grad[i * k + j] = (logp.exp() - q[j]) / n as f64;
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == t {
            correct += 1;
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "label_smoothing_loss".into(),
        });
    }
    Ok(LossOutput {
        loss,
        grad: Tensor::from_vec(d, grad)?,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(Dims::new(3, 10, 1, 1), 0.3);
        for eps in [0.0, 0.1, 0.4] {
            let out = label_smoothing_loss(&logits, &[0, 4, 9], eps).unwrap();
            assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_targets() {
        let logits = Tensor::zeros(Dims::new(2, 3, 1, 1));
        assert!(matches!(
            label_smoothing_loss(&logits, &[0, 3], 0.1),
            Err(Error::InvalidTarget { index: 1, target: 3, classes: 3 })
        ));
        assert!(label_smoothing_loss(&logits, &[0], 0.1).is_err());
    }
}
