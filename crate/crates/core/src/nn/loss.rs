use super::tape::log_sum_exp;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `target` under `softmax(logits)` and its gradient with
/// respect to the logits (`softmax − one_hot`).
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss, grad)
}
