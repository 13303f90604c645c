//! Feature construction shared by training (recorded episodes) and self-play
//! (episodes whose payouts live on a tape).
//!
//! Every feature vector is built from one participant's point of view: the
//! focal participant comes first and the other three follow in a canonical
//! sorted order, so relabelling the group never changes what a participant
//! sees.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::game::{fractional_contribution, RoundRecord, MAX_ENDOWMENT, NUM_PLAYERS, ROUNDS_PER_STAGE};

/// Per-round frame width of the contribution model.
pub const FRAME_DIM: usize = 16;
/// Leading frame columns that do not depend on payouts.
pub const FRAME_CONST_DIM: usize = 12;
/// Episode features of the vote model: rounds x channels x participants.
pub const VOTE_FEATURES: usize = ROUNDS_PER_STAGE * VOTE_CHANNELS * NUM_PLAYERS;
pub const VOTE_CHANNELS: usize = 3;
/// Payout normalizer: the largest possible per-participant payout share of
/// a round is `1.6 * 10`.
pub const PAYOUT_SCALE: f64 = 16.0;
const COIN_SCALE: f64 = MAX_ENDOWMENT as f64;

/// The parts of a round that features read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundView {
    pub endowments: [u32; NUM_PLAYERS],
    pub contributions: [u32; NUM_PLAYERS],
    pub payouts: [f64; NUM_PLAYERS],
}

impl From<&RoundRecord> for RoundView {
    fn from(r: &RoundRecord) -> Self {
        RoundView {
            endowments: r.state.endowments,
            contributions: r.state.contributions,
            payouts: r.outcome.payouts,
        }
    }
}

impl RoundView {
    fn fraction(&self, i: usize) -> f64 {
        fractional_contribution(self.endowments[i], self.contributions[i])
    }

    fn key(&self, i: usize) -> [f64; 4] {
        [
            self.endowments[i] as f64,
            self.contributions[i] as f64,
            self.fraction(i),
            self.payouts[i],
        ]
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn focal_first(focal: usize, key: impl Fn(usize) -> Vec<f64>) -> [usize; NUM_PLAYERS] {
    let mut others: Vec<usize> = (0..NUM_PLAYERS).filter(|j| *j != focal).collect();
    others.sort_by(|a, b| lexicographic(&key(*a), &key(*b)));
    [focal, others[0], others[1], others[2]]
}

/// Slot order of the contribution frame: the focal participant, then the
/// others sorted by their previous-round `(e, c, ρ, r)`.
pub fn frame_order(prev: Option<&RoundView>, focal: usize) -> [usize; NUM_PLAYERS] {
    match prev {
        Some(p) => focal_first(focal, |j| p.key(j).to_vec()),
        None => focal_first(focal, |_| Vec::new()),
    }
}

/// The payout-independent columns of a contribution frame:
/// focal `(e_t/10, c_{t-1}/10, ρ_{t-1})`, then each other participant's
/// `(e_{t-1}/10, c_{t-1}/10, ρ_{t-1})` in [`frame_order`]. Previous-round
/// values are zero in the first round.
pub fn frame_constant(
    endowment_now: u32,
    prev: Option<&RoundView>,
    order: &[usize; NUM_PLAYERS],
) -> [f64; FRAME_CONST_DIM] {
    let mut out = [0.0; FRAME_CONST_DIM];
    out[0] = endowment_now as f64 / COIN_SCALE;
    if let Some(p) = prev {
        let focal = order[0];
        out[1] = p.contributions[focal] as f64 / COIN_SCALE;
        out[2] = p.fraction(focal);
        for (slot, &j) in order.iter().enumerate().skip(1) {
            out[3 * slot] = p.endowments[j] as f64 / COIN_SCALE;
            out[3 * slot + 1] = p.contributions[j] as f64 / COIN_SCALE;
            out[3 * slot + 2] = p.fraction(j);
        }
    }
    out
}

/// Full frame: [`frame_constant`] followed by the previous-round payouts
/// `r/16` in [`frame_order`].
pub fn contribution_frame(
    endowment_now: u32,
    prev: Option<&RoundView>,
    focal: usize,
) -> [f64; FRAME_DIM] {
    let order = frame_order(prev, focal);
    let mut out = [0.0; FRAME_DIM];
    out[..FRAME_CONST_DIM].copy_from_slice(&frame_constant(endowment_now, prev, &order));
    if let Some(p) = prev {
        for (slot, &j) in order.iter().enumerate() {
            out[FRAME_CONST_DIM + slot] = p.payouts[j] / PAYOUT_SCALE;
        }
    }
    out
}

/// Frames of every round of an episode for one focal participant.
pub fn episode_frames(rounds: &[RoundView], focal: usize) -> Vec<[f64; FRAME_DIM]> {
    (0..rounds.len())
        .map(|t| {
            let prev = t.checked_sub(1).map(|p| &rounds[p]);
            contribution_frame(rounds[t].endowments[focal], prev, focal)
        })
        .collect()
}

fn check_episode(rounds: &[RoundView]) -> Result<()> {
    if rounds.len() != ROUNDS_PER_STAGE {
        return Err(Error::shape(
            "vote_features",
            format!("{} rounds, expected {ROUNDS_PER_STAGE}", rounds.len()),
        ));
    }
    Ok(())
}

/// Slot order of the vote features: the focal participant, then the others
/// sorted by their whole normalized trajectory.
pub fn vote_order(rounds: &[RoundView], focal: usize) -> [usize; NUM_PLAYERS] {
    focal_first(focal, |j| {
        rounds
            .iter()
            .flat_map(|r| {
                [
                    r.endowments[j] as f64,
                    r.contributions[j] as f64,
                    r.payouts[j],
                ]
            })
            .collect()
    })
}

/// Index of round `t`, channel `ch` (0 = e, 1 = c, 2 = r) and slot in the
/// vote feature vector.
pub fn vote_index(t: usize, channel: usize, slot: usize) -> usize {
    t * VOTE_CHANNELS * NUM_PLAYERS + channel * NUM_PLAYERS + slot
}

/// The 120 episode features seen by `focal`: `e/10`, `c/10` and `r/16` for
/// every round and slot.
pub fn vote_features(rounds: &[RoundView], focal: usize) -> Result<Vec<f64>> {
    check_episode(rounds)?;
    let order = vote_order(rounds, focal);
    let mut out = vec![0.0; VOTE_FEATURES];
    for (t, r) in rounds.iter().enumerate() {
        for (slot, &j) in order.iter().enumerate() {
            out[vote_index(t, 0, slot)] = r.endowments[j] as f64 / COIN_SCALE;
            out[vote_index(t, 1, slot)] = r.contributions[j] as f64 / COIN_SCALE;
            out[vote_index(t, 2, slot)] = r.payouts[j] / PAYOUT_SCALE;
        }
    }
    Ok(out)
}

pub fn views(rounds: &[RoundRecord]) -> Vec<RoundView> {
    rounds.iter().map(RoundView::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(e: [u32; 4], c: [u32; 4], r: [f64; 4]) -> RoundView {
        RoundView {
            endowments: e,
            contributions: c,
            payouts: r,
        }
    }

    #[test]
    fn first_round_frame_has_only_endowment() {
        let f = contribution_frame(8, None, 2);
        assert_eq!(f[0], 0.8);
        assert!(f[1..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn frame_layout() {
        let p = view([10, 4, 4, 4], [5, 4, 0, 2], [1.0, 2.0, 3.0, 4.0]);
        let f = contribution_frame(10, Some(&p), 0);
        // others sorted by contribution: 2 (c=0), 3 (c=2), 1 (c=4)
        let expected = [
            1.0, 0.5, 0.5, 0.4, 0.0, 0.0, 0.4, 0.2, 0.5, 0.4, 0.4, 1.0, 1.0 / 16.0, 3.0 / 16.0,
            4.0 / 16.0, 2.0 / 16.0,
        ];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{f:?}");
        }
    }

    #[test]
    fn frames_ignore_labels_of_others() {
        let p = view([10, 6, 6, 6], [3, 6, 1, 4], [2.0, 5.0, 0.5, 1.5]);
        let swapped = view([10, 6, 6, 6], [3, 4, 1, 6], [2.0, 1.5, 0.5, 5.0]);
        assert_eq!(
            contribution_frame(10, Some(&p), 0),
            contribution_frame(10, Some(&swapped), 0)
        );
    }

    #[test]
    fn vote_features_layout_and_invariance() {
        let rounds: Vec<RoundView> = (0..10)
            .map(|t| view([10, 2, 2, 2], [t % 3, 1, 2, 0], [1.6, t as f64, 0.0, 0.2]))
            .collect();
        let x = vote_features(&rounds, 1).unwrap();
        assert_eq!(x.len(), 120);
        assert_eq!(x[vote_index(0, 0, 0)], 0.2);
        assert_eq!(x[vote_index(3, 2, 0)], 3.0 / 16.0);
        // others of participant 1 ordered 3 (e=2,c=0), 2 (e=2,c=2), 0 (e=10)
        assert_eq!(vote_order(&rounds, 1), [1, 3, 2, 0]);
        let relabelled: Vec<RoundView> = rounds
            .iter()
            .map(|r| {
                let p = [0, 1, 3, 2];
                view(
                    p.map(|i| r.endowments[i]),
                    p.map(|i| r.contributions[i]),
                    p.map(|i| r.payouts[i]),
                )
            })
            .collect();
        assert_eq!(x, vote_features(&relabelled, 1).unwrap());
        assert!(vote_features(&rounds[..9], 0).is_err());
    }
}
