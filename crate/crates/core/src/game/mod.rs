//! Public Investment Game dynamics: rounds, stages, sessions and voting.

mod baselines;
mod round;
mod session;

pub use baselines::{
    liberal_egalitarian_weights, strict_egalitarian_weights, LiberalEgalitarian,
    ProportionalToContribution, StrictEgalitarian,
};
pub use round::{
    compute_round, fractional_contribution, RedistributionWeights, RoundOutcome, RoundRecord,
    RoundState,
};
pub use session::{
    majority_vote, run_session, run_stage, ContributionPolicy, EpisodeRecord, SessionRecord,
    VotePolicy, Winner,
};

/// Participants per group.
pub const NUM_PLAYERS: usize = 4;
/// Rounds per stage.
pub const ROUNDS_PER_STAGE: usize = 10;
/// Growth factor applied to the public fund.
pub const FUND_MULTIPLIER: f64 = 1.6;
/// Largest endowment any participant receives.
pub const MAX_ENDOWMENT: u32 = 10;
/// Head participant endowment; the head always sits in seat 0.
pub const HEAD_ENDOWMENT: u32 = 10;
/// Tail endowments used across groups.
pub const TAIL_ENDOWMENTS: [u32; 5] = [2, 4, 6, 8, 10];

pub(crate) const SIMPLEX_TOLERANCE: f64 = 1e-6;
pub(crate) const CONSERVATION_TOLERANCE: f64 = 1e-9;

/// Endowment vector for a group with the given tail endowment.
pub fn endowment_condition(tail: u32) -> [u32; NUM_PLAYERS] {
    [HEAD_ENDOWMENT, tail, tail, tail]
}

/// All five head/tail endowment conditions, in tail order.
pub fn endowment_conditions() -> [[u32; NUM_PLAYERS]; 5] {
    TAIL_ENDOWMENTS.map(endowment_condition)
}

pub fn is_valid_condition(endowments: &[u32; NUM_PLAYERS]) -> bool {
    endowment_conditions().contains(endowments)
}

/// A redistribution rule: maps one round's endowments and contributions to
/// weights over the participants.
pub trait Mechanism: Send + Sync {
    fn id(&self) -> &str;

    fn weights(
        &self,
        endowments: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights;
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn weights(
        &self,
        endowments: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights {
        (**self).weights(endowments, contributions)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn weights(
        &self,
        endowments: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights {
        (**self).weights(endowments, contributions)
    }
}
