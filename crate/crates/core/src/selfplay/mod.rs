//! OPTIMIZE: self-play training of the mechanism on the curried game.

mod estimator;
mod optimize;
mod rollout;

pub use estimator::{
    condition_baseline, estimate_policy_gradient, head_to_head, rollout_selfplay_pair,
    CurriedGameConfig, EstimatorOptions, GradientEstimate,
};
pub use optimize::{run_optimize, OptimizeOutcome, OptimizeSchedule, UpdateLog};
pub use rollout::{play_on_tape, play_on_tape_with, vote_logits_on_tape, MechanismRef, TapeEpisodes};
