//! Batched episodes of the curried game: a mechanism plays a batch of
//! groups whose contributions are sampled from the participant model.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::game::{
    compute_round, EpisodeRecord, RedistributionWeights, RoundRecord, RoundState, FUND_MULTIPLIER,
    NUM_PLAYERS,
};
use crate::mechanism::{weights_on_tape, MechanismConfig};
use crate::nn::{Matrix, ParamSet, Tape, Var};
use crate::participant::{
    contribution_step, frame_constant, frame_order, sample_class, vote_index, vote_order,
    ContributionState, ParticipantModel, RoundView, FRAME_CONST_DIM, NUM_CLASSES, PAYOUT_SCALE,
    VOTE_FEATURES,
};

/// A mechanism as seen by a rollout.
#[derive(Debug, Clone, Copy)]
pub struct MechanismRef<'a> {
    pub params: &'a ParamSet,
    pub config: &'a MechanismConfig,
}

/// A batch of episodes recorded on a tape.
#[derive(Debug)]
pub struct TapeEpisodes {
    pub endowments: Vec<[u32; NUM_PLAYERS]>,
    /// `contributions[t][g]`.
    pub contributions: Vec<Vec<[u32; NUM_PLAYERS]>>,
    /// `batch x 4` weights per round.
    pub weights: Vec<Var>,
    /// `batch x 4` payouts per round.
    pub payouts: Vec<Var>,
    /// `4·batch x 1` log-probability of each sampled contribution, per
    /// round; row `g·4 + i`.
    pub chosen_logp: Vec<Var>,
}

impl TapeEpisodes {
    pub fn batch(&self) -> usize {
        self.endowments.len()
    }

    pub fn rounds(&self) -> usize {
        self.contributions.len()
    }

    fn view(&self, tape: &Tape, t: usize, g: usize) -> RoundView {
        let p = tape.value(self.payouts[t]).row(g);
        RoundView {
            endowments: self.endowments[g],
            contributions: self.contributions[t][g],
            payouts: [p[0], p[1], p[2], p[3]],
        }
    }

    /// Round views of game `g`.
    pub fn views(&self, tape: &Tape, g: usize) -> Vec<RoundView> {
        (0..self.rounds()).map(|t| self.view(tape, t, g)).collect()
    }

    /// Episode records re-derived through `compute_round`.
    pub fn records(&self, tape: &Tape, mechanism_id: &str) -> Result<Vec<EpisodeRecord>> {
        (0..self.batch())
            .map(|g| {
                let rounds = (0..self.rounds())
                    .map(|t| {
                        let w = tape.value(self.weights[t]).row(g);
                        let weights = RedistributionWeights([w[0], w[1], w[2], w[3]]);
                        let state = RoundState::new(
                            t as u32 + 1,
                            self.endowments[g],
                            self.contributions[t][g],
                        )?;
                        let outcome = compute_round(&state, &weights)?;
                        Ok(RoundRecord {
                            state,
                            weights,
                            outcome,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EpisodeRecord::from_rounds(mechanism_id, rounds))
            })
            .collect()
    }
}

/// Plays `rounds` rounds for every group in `endowments`, drawing group
/// `g`'s contributions from `rngs[g]`. With `trainable` the mechanism
/// parameters are registered for differentiation; the participant model is
/// always held fixed.
pub fn play_on_tape(
    tape: &mut Tape,
    mechanism: MechanismRef<'_>,
    participants: &ParticipantModel,
    endowments: &[[u32; NUM_PLAYERS]],
    rounds: usize,
    rngs: &mut [impl RngCore],
    trainable: bool,
) -> Result<TapeEpisodes> {
    if rngs.len() != endowments.len() {
        return Err(Error::Validation(format!(
            "rollout needs one rng per group; got {} for {}",
            rngs.len(),
            endowments.len()
        )));
    }
    play_on_tape_with(tape, mechanism, participants, endowments, rounds, trainable, |_, row, probs| {
        sample_class(probs, &mut rngs[row / NUM_PLAYERS])
    })
}

/// [`play_on_tape`] with each contribution chosen by `pick(round, row,
/// probabilities)`, where `row` is `g·4 + i`. Used to replay fixed
/// contributions or enumerate outcomes. The pick must have positive
/// probability.
pub fn play_on_tape_with(
    tape: &mut Tape,
    mechanism: MechanismRef<'_>,
    participants: &ParticipantModel,
    endowments: &[[u32; NUM_PLAYERS]],
    rounds: usize,
    trainable: bool,
    mut pick: impl FnMut(usize, usize, &[f64]) -> usize,
) -> Result<TapeEpisodes> {
    let batch = endowments.len();
    if batch == 0 || rounds == 0 {
        return Err(Error::Validation(format!(
            "rollout needs groups and rounds; got {batch}, {rounds}"
        )));
    }
    let n = batch * NUM_PLAYERS;
    let pp = participants.params();
    let mut state = ContributionState::zeros(tape, pp, n)?;
    let mut episodes = TapeEpisodes {
        endowments: endowments.to_vec(),
        contributions: Vec::with_capacity(rounds),
        weights: Vec::with_capacity(rounds),
        payouts: Vec::with_capacity(rounds),
        chosen_logp: Vec::with_capacity(rounds),
    };
    let row_endowments: Vec<u32> = endowments.iter().flatten().copied().collect();
    let funds_scale = 1.0 / PAYOUT_SCALE;

    for t in 0..rounds {
        // Frame: payout-free columns as a constant, last-round payouts
        // gathered from the tape.
        let mut constant = Matrix::zeros(n, FRAME_CONST_DIM);
        let mut gather = Vec::with_capacity(n * NUM_PLAYERS);
        for g in 0..batch {
            let prev = t.checked_sub(1).map(|p| episodes.view(tape, p, g));
            for i in 0..NUM_PLAYERS {
                let order = frame_order(prev.as_ref(), i);
                constant
                    .row_mut(g * NUM_PLAYERS + i)
                    .copy_from_slice(&frame_constant(endowments[g][i], prev.as_ref(), &order));
                gather.extend(order.iter().map(|j| g * NUM_PLAYERS + j));
            }
        }
        let constant = tape.constant(constant);
        let payout_part = match t.checked_sub(1) {
            None => tape.constant(Matrix::zeros(n, NUM_PLAYERS)),
            Some(p) => {
                let r = tape.gather(episodes.payouts[p], gather, n, NUM_PLAYERS)?;
                tape.scale(r, funds_scale)
            }
        };
        let frames = tape.concat_cols(&[constant, payout_part])?;
        let logp = contribution_step(tape, pp, &mut state, frames, &row_endowments, false)?;

        let mut contributions = Vec::with_capacity(batch);
        let mut picks = Vec::with_capacity(n);
        {
            let lp = tape.value(logp);
            let mut probs = [0.0; NUM_CLASSES];
            for g in 0..batch {
                let mut c = [0u32; NUM_PLAYERS];
                for (i, ci) in c.iter_mut().enumerate() {
                    let row = g * NUM_PLAYERS + i;
                    for (p, l) in probs.iter_mut().zip(lp.row(row)) {
                        *p = l.exp();
                    }
                    let k = pick(t, row, &probs);
                    if probs.get(k).is_none_or(|p| *p <= 0.0) {
                        return Err(Error::Validation(format!(
                            "contribution {k} has no probability in round {} row {row}",
                            t + 1
                        )));
                    }
                    *ci = k as u32;
                    picks.push(row * NUM_CLASSES + k);
                }
                contributions.push(c);
            }
        }
        let chosen = tape.gather(logp, picks, n, 1)?;

        let weights = weights_on_tape(
            tape,
            mechanism.params,
            mechanism.config,
            endowments,
            &contributions,
            trainable,
        )?;
        let mut funds = Matrix::zeros(batch, NUM_PLAYERS);
        for (g, c) in contributions.iter().enumerate() {
            let fund = FUND_MULTIPLIER * c.iter().sum::<u32>() as f64;
            funds.row_mut(g).fill(fund);
        }
        let payouts = tape.mul_const(weights, funds)?;

        episodes.contributions.push(contributions);
        episodes.weights.push(weights);
        episodes.payouts.push(payouts);
        episodes.chosen_logp.push(chosen);
    }
    Ok(episodes)
}

/// Vote-model logits of every participant for their group's episode, as a
/// `batch x 4` node that depends on the tape's payouts. Episodes shorter
/// than ten rounds read as zero-padded.
pub fn vote_logits_on_tape(
    tape: &mut Tape,
    participants: &ParticipantModel,
    episodes: &TapeEpisodes,
) -> Result<Var> {
    let w = participants
        .params()
        .get("vote.w")
        .ok_or_else(|| Error::shape("vote logits", "missing `vote.w`"))?
        .data()
        .to_vec();
    let bias = participants
        .params()
        .get("vote.b")
        .ok_or_else(|| Error::shape("vote logits", "missing `vote.b`"))?
        .scalar_value();
    let rounds = episodes.rounds();
    if w.len() != VOTE_FEATURES || rounds * 12 > VOTE_FEATURES {
        return Err(Error::shape("vote logits", "episode longer than the vote model"));
    }
    let batch = episodes.batch();
    let k = rounds * NUM_PLAYERS;
    let mut coefs = vec![0.0; batch * k * NUM_PLAYERS];
    let mut constant = Matrix::zeros(batch, NUM_PLAYERS);
    for g in 0..batch {
        let views = episodes.views(tape, g);
        for i in 0..NUM_PLAYERS {
            let order = vote_order(&views, i);
            let mut c = bias;
            for (t, v) in views.iter().enumerate() {
                for (slot, &j) in order.iter().enumerate() {
                    c += w[vote_index(t, 0, slot)] * v.endowments[j] as f64 / 10.0;
                    c += w[vote_index(t, 1, slot)] * v.contributions[j] as f64 / 10.0;
                    coefs[(g * k + t * NUM_PLAYERS + j) * NUM_PLAYERS + i] =
                        w[vote_index(t, 2, slot)] / PAYOUT_SCALE;
                }
            }
            constant.set(g, i, c);
        }
    }
    let all_payouts = tape.concat_cols(&episodes.payouts)?;
    let mixed = tape.row_mix(all_payouts, coefs, NUM_PLAYERS)?;
    let constant = tape.constant(constant);
    tape.add(mixed, constant)
}
