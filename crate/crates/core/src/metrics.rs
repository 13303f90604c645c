//! Inequality and welfare summaries.

/// Gini coefficient `Σ_i Σ_j |x_i − x_j| / (2 n² mean)`; 0 for an empty or
/// all-zero sample.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut abs_diff = 0.0;
    for a in values {
        for b in values {
            abs_diff += (a - b).abs();
        }
    }
    abs_diff / (2.0 * n as f64 * total)
}

/// Sum of log rewards, with rewards floored at 1e-9.
pub fn log_welfare(rewards: &[f64]) -> f64 {
    rewards.iter().map(|r| r.max(1e-9).ln()).sum()
}
