//! MODEL step: fitting the contribution and vote networks, cross-validated
//! selection of sizes and regularization, and cross-dataset evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::contribution::{
    contribution_step, init_contribution_model, ContributionShape, ContributionState,
};
use super::features::{episode_frames, views, FRAME_DIM};
use super::vote::{train_vote_model, vote_cross_entropy};
use super::ParticipantModel;
use crate::error::{Error, Result};
use crate::game::{SessionRecord, NUM_PLAYERS, ROUNDS_PER_STAGE};
use crate::nn::{Adam, Matrix, ParamSet, Tape};
use crate::rng::{stream, StreamRng};

/// Groups and model sizes per iteration used in live mode.
pub const LIVE_GROUP_SCHEDULE: [usize; 7] = [73, 45, 51, 101, 53, 49, 42];

/// Contribution model size used in live mode at iteration `s` (1-based).
pub fn live_schedule_shape(iteration: usize) -> ContributionShape {
    if iteration <= 3 {
        ContributionShape::SMALL
    } else {
        ContributionShape::LARGE
    }
}

/// Optimizer settings for the contribution network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContributionTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ContributionTraining {
    fn default() -> Self {
        ContributionTraining {
            epochs: 40,
            batch_size: 128,
            learning_rate: 1e-2,
        }
    }
}

/// Everything needed to fit a participant model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHyperParams {
    pub shape: ContributionShape,
    pub contribution_l2: f64,
    pub vote_l2: f64,
    pub training: ContributionTraining,
    pub seed: u64,
}

/// One participant's contributions over one episode.
#[derive(Debug, Clone)]
pub struct ContributionSequence {
    pub frames: Vec<[f64; FRAME_DIM]>,
    pub endowments: Vec<u32>,
    pub targets: Vec<u32>,
}

/// Sequences from stages 1 and 2 of every session, four per episode.
pub fn contribution_sequences(sessions: &[&SessionRecord]) -> Vec<ContributionSequence> {
    let mut out = Vec::with_capacity(sessions.len() * 2 * NUM_PLAYERS);
    for s in sessions {
        for ep in [&s.stage1, &s.stage2] {
            let v = views(&ep.rounds);
            for i in 0..NUM_PLAYERS {
                out.push(ContributionSequence {
                    frames: episode_frames(&v, i),
                    endowments: v.iter().map(|r| r.endowments[i]).collect(),
                    targets: v.iter().map(|r| r.contributions[i]).collect(),
                });
            }
        }
    }
    out
}

/// Mean negative log-likelihood over every (sequence, round) of `batch`, as
/// a tape node, plus `l2 · Σ‖W‖²` over weight matrices when positive.
fn batch_loss(
    tape: &mut Tape,
    params: &ParamSet,
    batch: &[&ContributionSequence],
    l2: f64,
    trainable: bool,
) -> Result<crate::nn::Var> {
    let n = batch.len();
    let mut state = ContributionState::zeros(tape, params, n)?;
    let mut terms = Vec::with_capacity(ROUNDS_PER_STAGE);
    for t in 0..ROUNDS_PER_STAGE {
        let mut frames = Matrix::zeros(n, FRAME_DIM);
        let mut endowments = Vec::with_capacity(n);
        let mut picks = Vec::with_capacity(n);
        for (r, seq) in batch.iter().enumerate() {
            frames.row_mut(r).copy_from_slice(&seq.frames[t]);
            endowments.push(seq.endowments[t]);
            if seq.targets[t] > seq.endowments[t] {
                return Err(Error::Validation("contribution above endowment".into()));
            }
            picks.push(r * super::contribution::NUM_CLASSES + seq.targets[t] as usize);
        }
        let x = tape.constant(frames);
        let logp = contribution_step(tape, params, &mut state, x, &endowments, trainable)?;
        let chosen = tape.gather(logp, picks, n, 1)?;
        terms.push(tape.sum(chosen));
    }
    let total = tape.concat_cols(&terms)?;
    let total = tape.sum(total);
    let mut loss = tape.scale(total, -1.0 / (n * ROUNDS_PER_STAGE) as f64);
    if l2 > 0.0 && trainable {
        for name in ["contrib.in.w", "contrib.lstm.wx", "contrib.lstm.wh", "contrib.out.w"] {
            let w = tape.load(params, name, trainable)?;
            let sq = tape.mul(w, w)?;
            let s = tape.sum(sq);
            let s = tape.scale(s, l2);
            loss = tape.add(loss, s)?;
        }
    }
    Ok(loss)
}

/// Trains the contribution network with minibatch Adam. Returns the
/// parameters and the mean training loss of each epoch.
pub fn train_contribution_model(
    sessions: &[&SessionRecord],
    shape: ContributionShape,
    l2: f64,
    training: &ContributionTraining,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    let sequences = contribution_sequences(sessions);
    if sequences.is_empty() {
        return Err(Error::Empty("contribution training data".into()));
    }
    if training.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = init_contribution_model(shape, &mut stream(seed, &["contrib-init"], &[]));
    let mut adam = Adam::new(training.learning_rate);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut shuffle = StreamRng::seed_from_u64(crate::rng::derive_seed(seed, &["contrib-shuffle"], &[]));
    let mut history = Vec::with_capacity(training.epochs);
    for _ in 0..training.epochs {
        order.shuffle(&mut shuffle);
        let mut weighted = 0.0;
        for chunk in order.chunks(training.batch_size) {
            let batch: Vec<&ContributionSequence> = chunk.iter().map(|i| &sequences[*i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &params, &batch, l2, true)?;
            weighted += tape.value(loss).scalar_value() * batch.len() as f64;
            let grads = tape.backward(loss)?;
            adam.step(&mut params, &grads)?;
        }
        history.push(weighted / sequences.len() as f64);
    }
    Ok((params, history))
}

/// Mean per-decision cross-entropy of `params` on the sessions'
/// contributions.
pub fn contribution_cross_entropy(params: &ParamSet, sessions: &[&SessionRecord]) -> Result<f64> {
    let sequences = contribution_sequences(sessions);
    if sequences.is_empty() {
        return Err(Error::Empty("contribution evaluation data".into()));
    }
    let mut total = 0.0;
    for chunk in sequences.chunks(512) {
        let batch: Vec<&ContributionSequence> = chunk.iter().collect();
        let mut tape = Tape::new();
        let loss = batch_loss(&mut tape, params, &batch, 0.0, false)?;
        total += tape.value(loss).scalar_value() * batch.len() as f64;
    }
    Ok(total / sequences.len() as f64)
}

/// Candidate values searched by [`tune_hyperparameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGrid {
    pub shapes: Vec<ContributionShape>,
    pub contribution_l2: Vec<f64>,
    pub vote_l2: Vec<f64>,
}

impl Default for ModelGrid {
    fn default() -> Self {
        ModelGrid {
            shapes: vec![ContributionShape::SMALL, ContributionShape::LARGE],
            contribution_l2: vec![0.0],
            vote_l2: vec![1e-3, 1e-2, 1e-1],
        }
    }
}

impl ModelGrid {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.contribution_l2.is_empty() || self.vote_l2.is_empty() {
            return Err(Error::Config("every hyperparameter grid needs a value".into()));
        }
        Ok(())
    }
}

/// Held-out score of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub shape: Option<ContributionShape>,
    pub l2: f64,
    pub eval_cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub selected: ModelHyperParams,
    pub train_groups: Vec<String>,
    pub eval_groups: Vec<String>,
    pub contribution_scores: Vec<CandidateScore>,
    pub vote_scores: Vec<CandidateScore>,
}

/// Fraction of groups kept for training during selection.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Random group-level split; returns indices into `sessions`.
pub fn split_groups(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &["cv-split"], &[]));
    let train = if n < 2 {
        n
    } else {
        ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1)
    };
    let mut eval = idx.split_off(train);
    let mut train_idx = idx;
    train_idx.sort_unstable();
    eval.sort_unstable();
    (train_idx, eval)
}

/// Chooses the contribution shape and regularizers by held-out
/// cross-entropy on a 70/30 split of groups. Singleton grid dimensions are
/// taken as given without fitting. Ties keep the earlier candidate.
pub fn tune_hyperparameters(
    sessions: &[&SessionRecord],
    grid: &ModelGrid,
    training: &ContributionTraining,
    seed: u64,
) -> Result<TuningReport> {
    grid.validate()?;
    if sessions.is_empty() {
        return Err(Error::Empty("tuning data".into()));
    }
    let (train_idx, eval_idx) = split_groups(sessions.len(), seed);
    let train: Vec<&SessionRecord> = train_idx.iter().map(|i| sessions[*i]).collect();
    let eval: Vec<&SessionRecord> = eval_idx.iter().map(|i| sessions[*i]).collect();

    let mut contribution_scores = Vec::new();
    let mut best_contrib = (grid.shapes[0], grid.contribution_l2[0]);
    if grid.shapes.len() * grid.contribution_l2.len() > 1 && !eval.is_empty() {
        let mut best = f64::INFINITY;
        for shape in &grid.shapes {
            for l2 in &grid.contribution_l2 {
                let (p, _) = train_contribution_model(&train, *shape, *l2, training, seed)?;
                let ce = contribution_cross_entropy(&p, &eval)?;
                contribution_scores.push(CandidateScore {
                    shape: Some(*shape),
                    l2: *l2,
                    eval_cross_entropy: ce,
                });
                if ce < best {
                    best = ce;
                    best_contrib = (*shape, *l2);
                }
            }
        }
    }

    let mut vote_scores = Vec::new();
    let mut best_vote = grid.vote_l2[0];
    if grid.vote_l2.len() > 1 && !eval.is_empty() {
        let mut best = f64::INFINITY;
        for l2 in &grid.vote_l2 {
            let p = train_vote_model(&train, *l2)?;
            let ce = vote_cross_entropy(&p, &eval)?;
            vote_scores.push(CandidateScore {
                shape: None,
                l2: *l2,
                eval_cross_entropy: ce,
            });
            if ce < best {
                best = ce;
                best_vote = *l2;
            }
        }
    }

    Ok(TuningReport {
        selected: ModelHyperParams {
            shape: best_contrib.0,
            contribution_l2: best_contrib.1,
            vote_l2: best_vote,
            training: *training,
            seed,
        },
        train_groups: train.iter().map(|s| s.group_id.clone()).collect(),
        eval_groups: eval.iter().map(|s| s.group_id.clone()).collect(),
        contribution_scores,
        vote_scores,
    })
}

/// Fits both networks on all of `sessions`.
pub fn fit_participant_model(
    sessions: &[&SessionRecord],
    hparams: &ModelHyperParams,
) -> Result<ParticipantModel> {
    let (mut params, _) = train_contribution_model(
        sessions,
        hparams.shape,
        hparams.contribution_l2,
        &hparams.training,
        hparams.seed,
    )?;
    params.extend(train_vote_model(sessions, hparams.vote_l2)?);
    ParticipantModel::new(params)
}

/// Cross-entropy ratios of every model on every dataset, normalized by the
/// dataset's own model: entry `(i, j)` is `CE(model i, D_j) / CE(model j, D_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValMatrices {
    pub contribution: Vec<Vec<f64>>,
    pub vote: Vec<Vec<f64>>,
}

pub fn crossval_matrix(
    models: &[ParticipantModel],
    datasets: &[Vec<&SessionRecord>],
) -> Result<CrossValMatrices> {
    if models.len() != datasets.len() || models.is_empty() {
        return Err(Error::Validation(format!(
            "{} models for {} datasets",
            models.len(),
            datasets.len()
        )));
    }
    let s = models.len();
    let mut contrib = vec![vec![0.0; s]; s];
    let mut vote = vec![vec![0.0; s]; s];
    for (i, m) in models.iter().enumerate() {
        for (j, d) in datasets.iter().enumerate() {
            contrib[i][j] = contribution_cross_entropy(m.params(), d)?;
            vote[i][j] = vote_cross_entropy(m.params(), d)?;
        }
    }
    Ok(CrossValMatrices {
        contribution: normalize_columns(&contrib),
        vote: normalize_columns(&vote),
    })
}

fn normalize_columns(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = raw.len();
    (0..s)
        .map(|i| (0..s).map(|j| raw[i][j] / raw[j][j]).collect())
        .collect()
}
