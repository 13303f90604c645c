use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{
    compute_round, is_valid_condition, Mechanism, RoundRecord, RoundState, CONSERVATION_TOLERANCE,
    HEAD_ENDOWMENT, NUM_PLAYERS, ROUNDS_PER_STAGE,
};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Produces each participant's contribution for the next round from the
/// rounds already played in the current stage.
pub trait ContributionPolicy {
    fn contribute(
        &self,
        history: &[RoundRecord],
        endowments: &[u32; NUM_PLAYERS],
        rng: &mut dyn RngCore,
    ) -> [u32; NUM_PLAYERS];
}

/// Produces each participant's ballot after two stages. `true` means the
/// participant prefers the episode passed as `a`.
pub trait VotePolicy {
    fn vote(
        &self,
        a: &EpisodeRecord,
        b: &EpisodeRecord,
        rng: &mut dyn RngCore,
    ) -> [bool; NUM_PLAYERS];
}

/// A full stage of play under one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub mechanism_id: String,
    pub rounds: Vec<RoundRecord>,
    pub totals: [f64; NUM_PLAYERS],
}

impl EpisodeRecord {
    pub fn from_rounds(mechanism_id: impl Into<String>, rounds: Vec<RoundRecord>) -> Self {
        let totals = total_rewards(&rounds);
        EpisodeRecord {
            mechanism_id: mechanism_id.into(),
            rounds,
            totals,
        }
    }

    pub fn endowments(&self) -> Option<[u32; NUM_PLAYERS]> {
        self.rounds.first().map(|r| r.state.endowments)
    }

    /// Full structural validation: round count and order, per-round
    /// conservation, constant endowments, and the stored totals.
    pub fn validate(&self) -> Result<()> {
        if self.rounds.len() != ROUNDS_PER_STAGE {
            return Err(Error::Validation(format!(
                "episode has {} rounds, expected {ROUNDS_PER_STAGE}",
                self.rounds.len()
            )));
        }
        let endowments = self.rounds[0].state.endowments;
        for (t, round) in self.rounds.iter().enumerate() {
            if round.state.round_index != t as u32 + 1 {
                return Err(Error::Validation(format!(
                    "round {} stored at position {}",
                    round.state.round_index,
                    t + 1
                )));
            }
            if round.state.endowments != endowments {
                return Err(Error::Validation(
                    "endowments change within an episode".into(),
                ));
            }
            round.validate()?;
        }
        let expected = total_rewards(&self.rounds);
        for i in 0..NUM_PLAYERS {
            if (expected[i] - self.totals[i]).abs() >= CONSERVATION_TOLERANCE {
                return Err(Error::Validation(format!(
                    "participant {i} total {} disagrees with rounds ({})",
                    self.totals[i], expected[i]
                )));
            }
        }
        Ok(())
    }
}

fn total_rewards(rounds: &[RoundRecord]) -> [f64; NUM_PLAYERS] {
    let mut totals = [0.0; NUM_PLAYERS];
    for round in rounds {
        for (total, reward) in totals.iter_mut().zip(round.outcome.rewards()) {
            *total += reward;
        }
    }
    totals
}

/// Plays ten rounds of one mechanism with one group.
pub fn run_stage(
    mechanism: &dyn Mechanism,
    participants: &dyn ContributionPolicy,
    endowments: [u32; NUM_PLAYERS],
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut rounds = Vec::with_capacity(ROUNDS_PER_STAGE);
    for t in 1..=ROUNDS_PER_STAGE as u32 {
        let contributions = participants.contribute(&rounds, &endowments, &mut rng);
        let state = RoundState::new(t, endowments, contributions)?;
        let weights = mechanism.weights(&endowments, &contributions);
        let outcome = compute_round(&state, &weights)?;
        rounds.push(RoundRecord {
            state,
            weights,
            outcome,
        });
    }
    Ok(EpisodeRecord::from_rounds(mechanism.id(), rounds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
}

/// Majority over four ballots (`true` = A). A 2–2 split is settled by a fair
/// coin from `rng`; the second value reports whether that happened.
pub fn majority_vote(votes: &[bool; NUM_PLAYERS], rng: &mut dyn RngCore) -> (Winner, bool) {
    let for_a = votes.iter().filter(|v| **v).count();
    match for_a.cmp(&(NUM_PLAYERS - for_a)) {
        std::cmp::Ordering::Greater => (Winner::A, false),
        std::cmp::Ordering::Less => (Winner::B, false),
        std::cmp::Ordering::Equal => {
            let winner = if rng.random_bool(0.5) {
                Winner::A
            } else {
                Winner::B
            };
            (winner, true)
        }
    }
}

/// One group's three-stage session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub group_id: String,
    pub endowment_condition: [u32; NUM_PLAYERS],
    pub mechanism_a: String,
    pub mechanism_b: String,
    /// Whether mechanism B played stage 1.
    pub b_first: bool,
    pub stage1: EpisodeRecord,
    pub stage2: EpisodeRecord,
    /// 1 = the participant prefers the stage played by mechanism A.
    pub votes: [u8; NUM_PLAYERS],
    pub tie_broken: bool,
    pub winner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage3: Option<EpisodeRecord>,
    /// Seats filled by simulated participants in live sessions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bot_seats: Vec<u8>,
}

impl SessionRecord {
    pub fn episode_a(&self) -> &EpisodeRecord {
        if self.b_first {
            &self.stage2
        } else {
            &self.stage1
        }
    }

    pub fn episode_b(&self) -> &EpisodeRecord {
        if self.b_first {
            &self.stage1
        } else {
            &self.stage2
        }
    }

    /// Whether participant `i` preferred the stage-1 episode.
    pub fn prefers_stage1(&self, i: usize) -> bool {
        (self.votes[i] == 1) != self.b_first
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_condition(&self.endowment_condition) {
            return Err(Error::Validation(format!(
                "unknown endowment condition {:?}",
                self.endowment_condition
            )));
        }
        if self.endowment_condition[0] != HEAD_ENDOWMENT {
            return Err(Error::Validation("head endowment must be 10".into()));
        }
        if self.votes.iter().any(|v| *v > 1) {
            return Err(Error::Validation(format!(
                "votes {:?} must be binary",
                self.votes
            )));
        }
        if self.bot_seats.iter().any(|s| *s as usize >= NUM_PLAYERS) {
            return Err(Error::Validation("bot seat out of range".into()));
        }
        let stages = [Some(&self.stage1), Some(&self.stage2), self.stage3.as_ref()];
        for episode in stages.into_iter().flatten() {
            episode.validate()?;
            if episode.endowments() != Some(self.endowment_condition) {
                return Err(Error::Validation(
                    "episode endowments differ from the group condition".into(),
                ));
            }
        }
        if self.episode_a().mechanism_id != self.mechanism_a
            || self.episode_b().mechanism_id != self.mechanism_b
        {
            return Err(Error::Validation(
                "stage mechanisms do not match the declared order".into(),
            ));
        }
        if self.winner != self.mechanism_a && self.winner != self.mechanism_b {
            return Err(Error::Validation(format!(
                "winner `{}` is neither candidate",
                self.winner
            )));
        }
        let for_a = self.votes.iter().filter(|v| **v == 1).count();
        let majority_ok = match for_a {
            3 | 4 => self.winner == self.mechanism_a && !self.tie_broken,
            0 | 1 => self.winner == self.mechanism_b && !self.tie_broken,
            _ => self.tie_broken,
        };
        if !majority_ok {
            return Err(Error::Validation(
                "winner is inconsistent with the ballots".into(),
            ));
        }
        if let Some(stage3) = &self.stage3 {
            if stage3.mechanism_id != self.winner {
                return Err(Error::Validation(
                    "stage 3 was not played by the winner".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Plays stages 1 and 2 (order set by `b_first`), collects ballots, and
/// plays stage 3 with the majority choice. Stage `k` always draws from the
/// same seed regardless of which mechanism occupies it.
#[allow(clippy::too_many_arguments)]
pub fn run_session<P>(
    group_id: impl Into<String>,
    mechanism_a: &dyn Mechanism,
    mechanism_b: &dyn Mechanism,
    participants: &P,
    endowment_condition: [u32; NUM_PLAYERS],
    b_first: bool,
    rng: &mut dyn RngCore,
) -> Result<SessionRecord>
where
    P: ContributionPolicy + VotePolicy,
{
    let stage_seeds: [u64; 3] = std::array::from_fn(|_| rng.next_u64());
    let vote_seed = rng.next_u64();

    let (first, second) = if b_first {
        (mechanism_b, mechanism_a)
    } else {
        (mechanism_a, mechanism_b)
    };
    let stage1 = run_stage(first, participants, endowment_condition, stage_seeds[0])?;
    let stage2 = run_stage(second, participants, endowment_condition, stage_seeds[1])?;

    let mut vote_rng = StreamRng::seed_from_u64(vote_seed);
    let (episode_a, episode_b) = if b_first {
        (&stage2, &stage1)
    } else {
        (&stage1, &stage2)
    };
    let ballots = participants.vote(episode_a, episode_b, &mut vote_rng);
    let (winner, tie_broken) = majority_vote(&ballots, &mut vote_rng);
    let winning = match winner {
        Winner::A => mechanism_a,
        Winner::B => mechanism_b,
    };
    let stage3 = run_stage(winning, participants, endowment_condition, stage_seeds[2])?;

    Ok(SessionRecord {
        group_id: group_id.into(),
        endowment_condition,
        mechanism_a: mechanism_a.id().to_string(),
        mechanism_b: mechanism_b.id().to_string(),
        b_first,
        stage1,
        stage2,
        votes: ballots.map(u8::from),
        tie_broken,
        winner: winning.id().to_string(),
        stage3: Some(stage3),
        bot_seats: Vec::new(),
    })
}
