//! Contribution model: input linear layer, LSTM, and an output layer with one
//! logit per coin amount. Amounts above the current endowment are masked.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::features::FRAME_DIM;
use crate::error::{Error, Result};
use crate::game::MAX_ENDOWMENT;
use crate::nn::{
    init_linear, init_lstm, linear_forward, lstm_hidden_size, lstm_step, LstmState, Matrix,
    ParamSet, Tape, Var,
};

pub const NUM_CLASSES: usize = MAX_ENDOWMENT as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContributionShape {
    pub linear: usize,
    pub lstm: usize,
}

impl ContributionShape {
    pub const SMALL: ContributionShape = ContributionShape { linear: 8, lstm: 4 };
    pub const LARGE: ContributionShape = ContributionShape { linear: 32, lstm: 8 };

    pub fn of(params: &ParamSet) -> Result<Self> {
        let lin = params
            .get("contrib.in.w")
            .ok_or_else(|| Error::shape("contribution model", "missing `contrib.in.w`"))?;
        Ok(ContributionShape {
            linear: lin.cols(),
            lstm: lstm_hidden_size(params, "contrib.lstm")?,
        })
    }
}

pub fn init_contribution_model(shape: ContributionShape, rng: &mut dyn RngCore) -> ParamSet {
    let mut p = ParamSet::new();
    init_linear(&mut p, "contrib.in", FRAME_DIM, shape.linear, rng);
    init_lstm(&mut p, "contrib.lstm", shape.linear, shape.lstm, rng);
    init_linear(&mut p, "contrib.out", shape.lstm, NUM_CLASSES, rng);
    p
}

/// Recurrent state of a batch of participants.
#[derive(Debug, Clone, Copy)]
pub struct ContributionState {
    lstm: LstmState,
}

impl ContributionState {
    pub fn zeros(tape: &mut Tape, params: &ParamSet, batch: usize) -> Result<Self> {
        let hidden = lstm_hidden_size(params, "contrib.lstm")?;
        Ok(ContributionState {
            lstm: LstmState::zeros(tape, batch, hidden),
        })
    }
}

/// One round for a batch: `frames` is `N x 16`, and the result is `N x 11`
/// masked log-probabilities (`-inf` above each row's endowment).
pub fn contribution_step(
    tape: &mut Tape,
    params: &ParamSet,
    state: &mut ContributionState,
    frames: Var,
    endowments: &[u32],
    trainable: bool,
) -> Result<Var> {
    if endowments.iter().any(|e| *e > MAX_ENDOWMENT) {
        return Err(Error::Validation("endowment above 10".into()));
    }
    let x = linear_forward(tape, params, "contrib.in", frames, trainable)?;
    state.lstm = lstm_step(tape, params, "contrib.lstm", x, state.lstm, trainable)?;
    let logits = linear_forward(tape, params, "contrib.out", state.lstm.h, trainable)?;
    tape.log_softmax_masked(logits, endowments.iter().map(|e| *e as usize + 1).collect())
}

/// Probabilities of contributing 0..=10 coins at the last frame of `history`,
/// which holds one frame per round so far including the current one.
pub fn contribution_forward(
    params: &ParamSet,
    history: &[[f64; FRAME_DIM]],
    endowment: u32,
) -> Result<[f64; NUM_CLASSES]> {
    if history.is_empty() {
        return Err(Error::Empty("contribution history".into()));
    }
    let mut tape = Tape::new();
    let mut state = ContributionState::zeros(&mut tape, params, 1)?;
    let mut logp = None;
    for frame in history {
        let x = tape.constant(Matrix::row_vector(frame.to_vec()));
        logp = Some(contribution_step(&mut tape, params, &mut state, x, &[endowment], false)?);
    }
    let row = tape.value(logp.expect("nonempty")).row(0);
    Ok(std::array::from_fn(|k| row[k].exp()))
}

/// Inverse-CDF draw from a probability row; entries that are exactly zero
/// are never selected.
pub fn sample_class(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last = k;
        acc += p;
        if u < acc {
            return k;
        }
    }
    last
}
