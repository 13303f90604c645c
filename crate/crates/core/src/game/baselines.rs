use super::round::fractional_contribution;
use super::{Mechanism, RedistributionWeights, NUM_PLAYERS};

/// Equal quarters regardless of contributions.
pub fn strict_egalitarian_weights() -> RedistributionWeights {
    RedistributionWeights::uniform()
}

/// Shares proportional to the fraction of endowment each participant
/// contributed. Falls back to equal shares when nobody contributed, since
/// the fund is empty and any split conserves it.
pub fn liberal_egalitarian_weights(
    endowments: &[u32; NUM_PLAYERS],
    contributions: &[u32; NUM_PLAYERS],
) -> RedistributionWeights {
    let fractions: [f64; NUM_PLAYERS] =
        std::array::from_fn(|i| fractional_contribution(endowments[i], contributions[i]));
    normalize_or_uniform(fractions)
}

fn normalize_or_uniform(scores: [f64; NUM_PLAYERS]) -> RedistributionWeights {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return RedistributionWeights::uniform();
    }
    RedistributionWeights(scores.map(|s| s / total))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StrictEgalitarian;

impl StrictEgalitarian {
    pub const ID: &'static str = "strict-egalitarian";
}

impl Mechanism for StrictEgalitarian {
    fn id(&self) -> &str {
        Self::ID
    }

    fn weights(&self, _: &[u32; NUM_PLAYERS], _: &[u32; NUM_PLAYERS]) -> RedistributionWeights {
        strict_egalitarian_weights()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LiberalEgalitarian;

impl LiberalEgalitarian {
    pub const ID: &'static str = "liberal-egalitarian";
}

impl Mechanism for LiberalEgalitarian {
    fn id(&self) -> &str {
        Self::ID
    }

    fn weights(
        &self,
        endowments: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights {
        liberal_egalitarian_weights(endowments, contributions)
    }
}

/// Shares proportional to absolute coins contributed (`c_i / Σc`).
#[derive(Debug, Clone, Copy, Default)]
pub struct ProportionalToContribution;

impl ProportionalToContribution {
    pub const ID: &'static str = "proportional";
}

impl Mechanism for ProportionalToContribution {
    fn id(&self) -> &str {
        Self::ID
    }

    fn weights(
        &self,
        _: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights {
        normalize_or_uniform(contributions.map(f64::from))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{compute_round, RoundState};
    use crate::metrics::gini;

    fn close(a: &[f64; 4], b: &[f64; 4]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn strict_is_uniform() {
        assert_eq!(strict_egalitarian_weights().0, [0.25; 4]);
        let s = RoundState::new(3, [10, 6, 6, 6], [7, 1, 6, 0]).unwrap();
        let out = compute_round(&s, &strict_egalitarian_weights()).unwrap();
        assert_eq!(gini(&out.payouts), 0.0);
    }

    #[test]
    fn strict_single_contributor() {
        let s = RoundState::new(1, [10; 4], [10, 0, 0, 0]).unwrap();
        let out = compute_round(&s, &strict_egalitarian_weights()).unwrap();
        for p in out.payouts {
            assert!((p - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn liberal_normalizes_fractions() {
        let w = liberal_egalitarian_weights(&[10, 2, 2, 2], &[10, 1, 1, 1]);
        assert!(close(&w.0, &[0.4, 0.2, 0.2, 0.2]));
        let w = liberal_egalitarian_weights(&[10, 2, 2, 2], &[0; 4]);
        assert_eq!(w.0, [0.25; 4]);
        let w = liberal_egalitarian_weights(&[10; 4], &[10, 0, 0, 0]);
        assert_eq!(w.0, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn liberal_zero_endowment_counts_as_zero_fraction() {
        let w = liberal_egalitarian_weights(&[10, 0, 2, 2], &[5, 0, 2, 0]);
        assert!(close(&w.0, &[0.5 / 1.5, 0.0, 1.0 / 1.5, 0.0]));
    }

    #[test]
    fn proportional_matches_coin_shares() {
        let w = ProportionalToContribution.weights(&[10, 2, 2, 2], &[6, 2, 0, 2]);
        assert!(close(&w.0, &[0.6, 0.2, 0.0, 0.2]));
    }
}
