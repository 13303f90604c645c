//! Policy-gradient estimate of the self-play objective: the mean predicted
//! share of votes for episode A, where A is played by the learner and B by a
//! frozen copy.
//!
//! The gradient has two parts. The pathwise part differentiates through
//! weights, payouts, later-round contribution inputs and the vote model with
//! the sampled contributions held fixed. The score-function part weights the
//! gradient of each sampled contribution's log-probability by the game's
//! objective minus a baseline: the mean objective of the other games with the
//! same endowments in the batch, which leaves the estimate unbiased.

use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::rollout::{play_on_tape, vote_logits_on_tape, MechanismRef, TapeEpisodes};
use crate::error::{Error, Result};
use crate::game::{endowment_conditions, EpisodeRecord, NUM_PLAYERS, ROUNDS_PER_STAGE};
use crate::nn::{Matrix, ParamSet, Tape, Var};
use crate::participant::{two_way_softmax, ParticipantModel};
use crate::rng::{derive_seed, StreamRng};

/// The game faced by the mechanism once participants are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriedGameConfig {
    pub conditions: Vec<[u32; NUM_PLAYERS]>,
    pub rounds: usize,
    /// Games per update, split equally across `conditions`.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CurriedGameConfig {
    fn default() -> Self {
        CurriedGameConfig {
            conditions: endowment_conditions().to_vec(),
            rounds: ROUNDS_PER_STAGE,
            batch_size: 1000,
            seed: 0,
        }
    }
}

impl CurriedGameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty()
            || self.batch_size == 0
            || self.batch_size % self.conditions.len() != 0
        {
            return Err(Error::Config(format!(
                "batch of {} games does not split over {} conditions",
                self.batch_size,
                self.conditions.len()
            )));
        }
        if self.rounds == 0 || self.rounds > ROUNDS_PER_STAGE {
            return Err(Error::Config(format!("{} rounds per episode", self.rounds)));
        }
        Ok(())
    }

    /// Endowments of each game in a batch; condition `g mod n` for game `g`.
    pub fn batch_endowments(&self) -> Vec<[u32; NUM_PLAYERS]> {
        (0..self.batch_size)
            .map(|g| self.conditions[g % self.conditions.len()])
            .collect()
    }
}

/// Toggles for the two estimator parts, for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorOptions {
    pub score_function: bool,
    pub baseline: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            score_function: true,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// Gradient of the objective (ascent direction).
    pub grads: ParamSet,
    /// Mean predicted vote share of episode A over the batch.
    pub objective: f64,
    /// Per-game mean vote share of episode A.
    pub game_values: Vec<f64>,
}

impl GradientEstimate {
    pub fn grad_norm(&self) -> f64 {
        self.grads.l2_norm()
    }
}

fn rngs(seed: u64, label: &str, batch_index: u64, n: usize) -> Vec<StreamRng> {
    (0..n)
        .map(|g| StreamRng::seed_from_u64(derive_seed(seed, &["selfplay", label], &[batch_index, g as u64])))
        .collect()
}

/// `batch x 4` probabilities that each participant prefers A.
fn vote_probabilities(
    tape: &mut Tape,
    participants: &ParticipantModel,
    a: &TapeEpisodes,
    b_logits: &Matrix,
) -> Result<Var> {
    let la = vote_logits_on_tape(tape, participants, a)?;
    let lb = tape.constant(b_logits.clone());
    let diff = tape.sub(la, lb)?;
    Ok(tape.sigmoid(diff))
}

/// Plays the frozen opponent's episodes and returns them with their vote
/// logits.
fn opponent(
    mechanism: MechanismRef<'_>,
    participants: &ParticipantModel,
    endowments: &[[u32; NUM_PLAYERS]],
    rounds: usize,
    rngs: &mut [StreamRng],
) -> Result<(Tape, TapeEpisodes, Matrix)> {
    let mut tape = Tape::new();
    let eps = play_on_tape(&mut tape, mechanism, participants, endowments, rounds, rngs, false)?;
    let logits = vote_logits_on_tape(&mut tape, participants, &eps)?;
    let logits = tape.value(logits).clone();
    Ok((tape, eps, logits))
}

/// Leave-one-out mean of `values` among games sharing an endowment
/// condition; zero for a game alone in its condition.
pub fn condition_baseline(values: &[f64], endowments: &[[u32; NUM_PLAYERS]]) -> Vec<f64> {
    let mut sums: Vec<([u32; NUM_PLAYERS], f64, usize)> = Vec::new();
    for (v, e) in values.iter().zip(endowments) {
        match sums.iter_mut().find(|(k, _, _)| k == e) {
            Some(s) => {
                s.1 += v;
                s.2 += 1;
            }
            None => sums.push((*e, *v, 1)),
        }
    }
    values
        .iter()
        .zip(endowments)
        .map(|(v, e)| {
            let (_, total, count) = sums.iter().find(|(k, _, _)| k == e).expect("present");
            if *count > 1 {
                (total - v) / (*count - 1) as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// One batch estimate. `batch_index` selects the batch's random streams.
pub fn estimate_policy_gradient(
    mechanism: MechanismRef<'_>,
    participants: &ParticipantModel,
    game: &CurriedGameConfig,
    batch_index: u64,
    options: EstimatorOptions,
) -> Result<GradientEstimate> {
    game.validate()?;
    let endowments = game.batch_endowments();
    let batch = endowments.len();

    let mut rngs_b = rngs(game.seed, "b", batch_index, batch);
    let (_, _, b_logits) = opponent(mechanism, participants, &endowments, game.rounds, &mut rngs_b)?;

    let mut tape = Tape::new();
    let mut rngs_a = rngs(game.seed, "a", batch_index, batch);
    let a = play_on_tape(&mut tape, mechanism, participants, &endowments, game.rounds, &mut rngs_a, true)?;
    let probs = vote_probabilities(&mut tape, participants, &a, &b_logits)?;
    let pv = tape.value(probs);
    let game_values: Vec<f64> = (0..batch)
        .map(|g| pv.row(g).iter().sum::<f64>() / NUM_PLAYERS as f64)
        .collect();
    let objective = game_values.iter().sum::<f64>() / batch as f64;

    let mut surrogate = tape.mean(probs);
    if options.score_function {
        let baseline = if options.baseline {
            condition_baseline(&game_values, &endowments)
        } else {
            vec![0.0; batch]
        };
        let mut advantage = Matrix::zeros(batch * NUM_PLAYERS, 1);
        for g in 0..batch {
            for i in 0..NUM_PLAYERS {
                advantage.set(g * NUM_PLAYERS + i, 0, (game_values[g] - baseline[g]) / batch as f64);
            }
        }
        for chosen in &a.chosen_logp {
            if !tape.requires_grad(*chosen) {
                continue;
            }
            let weighted = tape.mul_const(*chosen, advantage.clone())?;
            let term = tape.sum(weighted);
            surrogate = tape.add(surrogate, term)?;
        }
    }
    let grads = tape.backward(surrogate)?;
    if !grads.is_finite() || !objective.is_finite() {
        return Err(Error::NonFinite(format!(
            "policy gradient at batch {batch_index}: objective {objective}, gradient norm {}",
            grads.l2_norm()
        )));
    }
    Ok(GradientEstimate {
        grads,
        objective,
        game_values,
    })
}

/// One game of each side plus every participant's probability of preferring
/// A. Both sides use `mechanism`; B plays the role of the frozen copy.
pub fn rollout_selfplay_pair(
    mechanism: MechanismRef<'_>,
    participants: &ParticipantModel,
    endowments: [u32; NUM_PLAYERS],
    rng: &mut dyn RngCore,
) -> Result<(EpisodeRecord, EpisodeRecord, [f64; NUM_PLAYERS])> {
    let mut rng_a = [StreamRng::seed_from_u64(rng.next_u64())];
    let mut rng_b = [StreamRng::seed_from_u64(rng.next_u64())];
    let (tape_b, eps_b, b_logits) =
        opponent(mechanism, participants, &[endowments], ROUNDS_PER_STAGE, &mut rng_b)?;
    let mut tape = Tape::new();
    let a = play_on_tape(&mut tape, mechanism, participants, &[endowments], ROUNDS_PER_STAGE, &mut rng_a, false)?;
    let probs = vote_probabilities(&mut tape, participants, &a, &b_logits)?;
    let p = tape.value(probs).row(0);
    let ep_a = a.records(&tape, "a")?.remove(0);
    let ep_b = eps_b.records(&tape_b, "b")?.remove(0);
    Ok((ep_a, ep_b, [p[0], p[1], p[2], p[3]]))
}

/// Per-game mean probabilities of preferring each side when `a` plays the
/// A side and `b` the B side, with both sides' streams derived from `seed`.
pub fn head_to_head(
    a: MechanismRef<'_>,
    b: MechanismRef<'_>,
    participants: &ParticipantModel,
    endowments: &[[u32; NUM_PLAYERS]],
    rounds: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let n = endowments.len();
    let mut rngs_b = rngs(seed, "b", 0, n);
    let (_, _, b_logits) = opponent(b, participants, endowments, rounds, &mut rngs_b)?;
    let mut tape = Tape::new();
    let mut rngs_a = rngs(seed, "a", 0, n);
    let eps = play_on_tape(&mut tape, a, participants, endowments, rounds, &mut rngs_a, false)?;
    let la = vote_logits_on_tape(&mut tape, participants, &eps)?;
    let la = tape.value(la);
    Ok((0..n)
        .map(|g| {
            let (mut pa, mut pb) = (0.0, 0.0);
            for i in 0..NUM_PLAYERS {
                let (x, y) = two_way_softmax(la.get(g, i), b_logits.get(g, i));
                pa += x;
                pb += y;
            }
            (pa / NUM_PLAYERS as f64, pb / NUM_PLAYERS as f64)
        })
        .collect())
}
