use serde::{Deserialize, Serialize};

use super::estimator::{estimate_policy_gradient, CurriedGameConfig, EstimatorOptions};
use super::rollout::MechanismRef;
use crate::error::{Error, Result};
use crate::mechanism::MechanismConfig;
use crate::nn::{Adam, ParamSet};
use crate::participant::ParticipantModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSchedule {
    pub learning_rate: f64,
    pub intermediate_updates: usize,
    pub final_updates: usize,
    /// Snapshot interval in updates; 0 disables snapshots.
    pub checkpoint_every: usize,
}

impl Default for OptimizeSchedule {
    fn default() -> Self {
        OptimizeSchedule {
            learning_rate: 4e-5,
            intermediate_updates: 2000,
            final_updates: 10000,
            checkpoint_every: 500,
        }
    }
}

impl OptimizeSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn updates(&self, final_iteration: bool) -> usize {
        if final_iteration {
            self.final_updates
        } else {
            self.intermediate_updates
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: ParamSet,
    pub log: Vec<UpdateLog>,
    /// Diagnostic when training stopped on a non-finite estimate.
    pub aborted: Option<String>,
}

/// Adam ascent on the self-play objective for `updates` steps. Batch `u`
/// draws its games from streams indexed by `u`, so runs are reproducible.
/// `on_checkpoint` sees the parameters after every `checkpoint_every`-th
/// update.
pub fn run_optimize(
    init: &ParamSet,
    config: &MechanismConfig,
    participants: &ParticipantModel,
    game: &CurriedGameConfig,
    schedule: &OptimizeSchedule,
    updates: usize,
    mut on_checkpoint: impl FnMut(usize, &ParamSet) -> Result<()>,
) -> Result<OptimizeOutcome> {
    schedule.validate()?;
    game.validate()?;
    config.check_params(init)?;
    let mut params = init.clone();
    let mut adam = Adam::new(schedule.learning_rate);
    let mut log = Vec::with_capacity(updates);
    for u in 0..updates {
        let mech = MechanismRef {
            params: &params,
            config,
        };
        let estimate = match estimate_policy_gradient(mech, participants, game, u as u64, EstimatorOptions::default()) {
            Ok(e) => e,
            Err(Error::NonFinite(msg)) => {
                tracing::warn!(update = u, "optimization aborted: {msg}");
                return Ok(OptimizeOutcome {
                    params,
                    log,
                    aborted: Some(msg),
                });
            }
            Err(e) => return Err(e),
        };
        let mut descent = estimate.grads.clone();
        descent.scale(-1.0);
        let grad_norm = estimate.grad_norm();
        adam.step(&mut params, &descent)?;
        log.push(UpdateLog {
            update: u + 1,
            objective: estimate.objective,
            grad_norm,
        });
        if u % 100 == 0 {
            tracing::debug!(update = u + 1, objective = estimate.objective, grad_norm, "optimize");
        }
        if schedule.checkpoint_every > 0 && (u + 1) % schedule.checkpoint_every == 0 {
            on_checkpoint(u + 1, &params)?;
        }
    }
    Ok(OptimizeOutcome {
        params,
        log,
        aborted: None,
    })
}
