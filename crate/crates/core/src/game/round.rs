use serde::{Deserialize, Serialize};

use super::{
    CONSERVATION_TOLERANCE, FUND_MULTIPLIER, MAX_ENDOWMENT, NUM_PLAYERS, ROUNDS_PER_STAGE,
    SIMPLEX_TOLERANCE,
};
use crate::error::{Error, Result};

/// Endowments and contributions of one round, in coins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    #[serde(rename = "round")]
    pub round_index: u32,
    pub endowments: [u32; NUM_PLAYERS],
    pub contributions: [u32; NUM_PLAYERS],
}

impl RoundState {
    pub fn new(
        round_index: u32,
        endowments: [u32; NUM_PLAYERS],
        contributions: [u32; NUM_PLAYERS],
    ) -> Result<Self> {
        let state = RoundState {
            round_index,
            endowments,
            contributions,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=ROUNDS_PER_STAGE as u32).contains(&self.round_index) {
            return Err(Error::Validation(format!(
                "round index {} outside 1..={ROUNDS_PER_STAGE}",
                self.round_index
            )));
        }
        for (i, (&e, &c)) in self
            .endowments
            .iter()
            .zip(self.contributions.iter())
            .enumerate()
        {
            if e > MAX_ENDOWMENT {
                return Err(Error::Validation(format!(
                    "participant {i} endowment {e} exceeds {MAX_ENDOWMENT}"
                )));
            }
            if c > e {
                return Err(Error::Validation(format!(
                    "participant {i} contributed {c} of an endowment of {e}"
                )));
            }
        }
        Ok(())
    }

    /// Fraction of endowment contributed by each participant.
    pub fn fractions(&self) -> [f64; NUM_PLAYERS] {
        std::array::from_fn(|i| fractional_contribution(self.endowments[i], self.contributions[i]))
    }

    pub fn total_contribution(&self) -> u32 {
        self.contributions.iter().sum()
    }
}

/// `c / e`, defined as 0 for an empty endowment.
pub fn fractional_contribution(endowment: u32, contribution: u32) -> f64 {
    if endowment == 0 {
        0.0
    } else {
        contribution as f64 / endowment as f64
    }
}

/// Shares of the public fund returned to each participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RedistributionWeights(pub [f64; NUM_PLAYERS]);

impl RedistributionWeights {
    pub fn new(weights: [f64; NUM_PLAYERS]) -> Result<Self> {
        let w = RedistributionWeights(weights);
        w.validate()?;
        Ok(w)
    }

    pub fn uniform() -> Self {
        RedistributionWeights([1.0 / NUM_PLAYERS as f64; NUM_PLAYERS])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!(
                "weights {:?} must be finite and nonnegative",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() >= SIMPLEX_TOLERANCE {
            return Err(Error::Validation(format!(
                "weights {:?} sum to {sum}, not 1",
                self.0
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> &[f64; NUM_PLAYERS] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub fund: f64,
    pub payouts: [f64; NUM_PLAYERS],
    pub kept: [f64; NUM_PLAYERS],
}

impl RoundOutcome {
    /// Payout plus kept coins for each participant.
    pub fn rewards(&self) -> [f64; NUM_PLAYERS] {
        std::array::from_fn(|i| self.payouts[i] + self.kept[i])
    }
}

/// Applies the redistribution weights to one round.
pub fn compute_round(state: &RoundState, weights: &RedistributionWeights) -> Result<RoundOutcome> {
    state.validate()?;
    weights.validate()?;
    let fund = FUND_MULTIPLIER * state.total_contribution() as f64;
    let payouts = weights.0.map(|w| w * fund);
    let kept = std::array::from_fn(|i| (state.endowments[i] - state.contributions[i]) as f64);
    Ok(RoundOutcome {
        fund,
        payouts,
        kept,
    })
}

/// One executed round as persisted in episode records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    #[serde(flatten)]
    pub state: RoundState,
    pub weights: RedistributionWeights,
    #[serde(flatten)]
    pub outcome: RoundOutcome,
}

impl RoundRecord {
    /// Checks the state, the weights and that the stored outcome is the one
    /// `compute_round` produces.
    pub fn validate(&self) -> Result<()> {
        let expected = compute_round(&self.state, &self.weights)?;
        if (expected.fund - self.outcome.fund).abs() >= CONSERVATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "round {}: fund {} but contributions imply {}",
                self.state.round_index, self.outcome.fund, expected.fund
            )));
        }
        let paid: f64 = self.outcome.payouts.iter().sum();
        if (paid - self.outcome.fund).abs() >= CONSERVATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "round {}: payouts sum to {paid}, fund is {}",
                self.state.round_index, self.outcome.fund
            )));
        }
        for i in 0..NUM_PLAYERS {
            if (expected.payouts[i] - self.outcome.payouts[i]).abs() >= CONSERVATION_TOLERANCE
                || expected.kept[i] != self.outcome.kept[i]
            {
                return Err(Error::Validation(format!(
                    "round {}: participant {i} outcome disagrees with weights",
                    self.state.round_index
                )));
            }
        }
        Ok(())
    }
}
