//! Imitation models of participant behavior.

mod contribution;
mod features;
mod train;
mod vote;

pub use contribution::{
    contribution_forward, contribution_step, init_contribution_model, sample_class,
    ContributionShape, ContributionState, NUM_CLASSES,
};
pub use features::{
    contribution_frame, episode_frames, frame_constant, frame_order, views, vote_features,
    vote_index, vote_order, RoundView, FRAME_CONST_DIM, FRAME_DIM, PAYOUT_SCALE, VOTE_CHANNELS,
    VOTE_FEATURES,
};
pub use train::{
    contribution_cross_entropy, contribution_sequences, crossval_matrix, fit_participant_model,
    live_schedule_shape, split_groups, train_contribution_model, tune_hyperparameters,
    CandidateScore, ContributionSequence, ContributionTraining, CrossValMatrices, ModelGrid,
    ModelHyperParams, TuningReport, LIVE_GROUP_SCHEDULE, TRAIN_FRACTION,
};
pub use vote::{
    init_vote_model, train_vote_model, train_vote_on_examples, two_way_softmax, vote_accuracy,
    vote_cross_entropy, vote_examples, vote_forward, vote_logit, VoteExample,
};

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::game::{ContributionPolicy, EpisodeRecord, RoundRecord, VotePolicy, NUM_PLAYERS};
use crate::nn::ParamSet;

/// Contribution and vote networks together (`contrib.*` and `vote.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantModel {
    params: ParamSet,
    shape: ContributionShape,
}

impl ParticipantModel {
    pub fn new(params: ParamSet) -> Result<Self> {
        let shape = ContributionShape::of(&params)?;
        vote_logit(&params, &[0.0; VOTE_FEATURES])?;
        Ok(ParticipantModel { params, shape })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn shape(&self) -> ContributionShape {
        self.shape
    }

    /// Probability that `focal` prefers episode `a`.
    pub fn vote_probability(&self, a: &EpisodeRecord, b: &EpisodeRecord, focal: usize) -> Result<f64> {
        let xa = vote_features(&views(&a.rounds), focal)?;
        let xb = vote_features(&views(&b.rounds), focal)?;
        Ok(vote_forward(&self.params, &xa, &xb)?.0)
    }
}

impl ContributionPolicy for ParticipantModel {
    fn contribute(
        &self,
        history: &[RoundRecord],
        endowments: &[u32; NUM_PLAYERS],
        rng: &mut dyn RngCore,
    ) -> [u32; NUM_PLAYERS] {
        let v = views(history);
        std::array::from_fn(|i| {
            let mut frames = episode_frames(&v, i);
            frames.push(contribution_frame(endowments[i], v.last(), i));
            let probs = contribution_forward(&self.params, &frames, endowments[i])
                .expect("shape checked at construction");
            sample_class(&probs, rng) as u32
        })
    }
}

impl VotePolicy for ParticipantModel {
    fn vote(&self, a: &EpisodeRecord, b: &EpisodeRecord, rng: &mut dyn RngCore) -> [bool; NUM_PLAYERS] {
        std::array::from_fn(|i| {
            let p = self
                .vote_probability(a, b, i)
                .expect("complete episodes");
            rng.random::<f64>() < p
        })
    }
}
