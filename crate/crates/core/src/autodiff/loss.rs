use super::{NnError, Tensor};

/// KL(target ‖ pred) per channel, summed over channels and averaged over the
/// batch. Cells where the target is zero contribute nothing.
///
/// Both tensors are `[N, C, H, W]`; each target channel must sum to one.
/// Returns the loss and its gradient with respect to `pred`.
pub fn loss_kl(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() || pred.shape().len() != 4 {
        return Err(NnError::Loss(format!(
            "kl expects matching [N, C, H, W] tensors, got {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred
        .data()
        .iter()
        .chain(target.data())
        .any(|v| *v < 0.0 || v.is_nan())
    {
        return Err(NnError::Loss("kl inputs must be nonnegative".into()));
    }
    let plane = pred.shape()[2] * pred.shape()[3];
    for (i, ch) in target.data().chunks(plane).enumerate() {
        let s: f64 = ch.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(NnError::Loss(format!("target channel {i} sums to {s}")));
        }
    }
    let n = pred.batch().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for ((p, t), g) in pred.data().iter().zip(target.data()).zip(grad.iter_mut()) {
        if *t > 0.0 {
            let p = p.max(f64::MIN_POSITIVE);
            loss += t * (t.ln() - p.ln());
            *g = -t / (p * n);
        }
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Mean squared error over all entries, with gradient `2 (pred - target) / n`.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::Loss(format!(
            "mse length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, grad))
}
