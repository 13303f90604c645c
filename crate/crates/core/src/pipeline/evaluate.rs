use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{condition_for_group, payout_gini, ArchetypeSpec, SimGroup};
use crate::error::{Error, Result};
use crate::game::{
    run_session, EpisodeRecord, Mechanism, SessionRecord, NUM_PLAYERS, ROUNDS_PER_STAGE,
    TAIL_ENDOWMENTS,
};
use crate::metrics::log_welfare;
use crate::participant::ParticipantModel;
use crate::rng::stream;

/// Who plays the evaluation groups.
#[derive(Debug, Clone, Copy)]
pub enum Population<'a> {
    /// Groups drawn from a planted archetype mixture.
    Cohort(&'a [ArchetypeSpec]),
    /// Every group is the fitted participant model.
    Model(&'a ParticipantModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionShare {
    pub tail_endowment: u32,
    pub groups: usize,
    pub votes_total: usize,
    pub votes_for_mechanism: usize,
    pub share: f64,
}

/// Mean contribution per round for one seat role under one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionCurve {
    pub mechanism: String,
    pub tail_endowment: u32,
    /// `head` or `tail`.
    pub role: String,
    pub mean_by_round: Vec<f64>,
}

/// Welfare and inequality of one group's episode under one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group_id: String,
    pub mechanism: String,
    pub tail_endowment: u32,
    pub log_welfare: f64,
    pub gini: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mechanism: String,
    pub baseline: String,
    pub groups: usize,
    pub votes_total: usize,
    pub votes_for_mechanism: usize,
    pub vote_share: f64,
    pub per_condition: Vec<ConditionShare>,
    pub contribution_curves: Vec<ContributionCurve>,
    pub outcomes: Vec<GroupOutcome>,
}

/// Plays `groups` counterbalanced sessions of `mechanism` (A) against
/// `baseline` (B): endowment conditions are cycled and the stage order
/// alternates between consecutive groups.
pub fn evaluate(
    mechanism: &dyn Mechanism,
    baseline: &dyn Mechanism,
    population: Population<'_>,
    groups: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if groups == 0 {
        return Err(Error::Empty("evaluation groups".into()));
    }
    if let Population::Cohort(a) = population {
        if a.is_empty() {
            return Err(Error::Empty("evaluation cohort".into()));
        }
    }
    let sessions: Vec<SessionRecord> = (0..groups)
        .into_par_iter()
        .map(|k| {
            let id = format!("eval-g{k:04}");
            let condition = condition_for_group(k);
            let b_first = k % 2 == 1;
            let mut rng = stream(seed, &["evaluate", "session"], &[k as u64]);
            match population {
                Population::Cohort(archetypes) => {
                    let group = SimGroup::sample(
                        archetypes,
                        &mut stream(seed, &["evaluate", "members"], &[k as u64]),
                    );
                    run_session(id, mechanism, baseline, &group, condition, b_first, &mut rng)
                }
                Population::Model(model) => {
                    run_session(id, mechanism, baseline, model, condition, b_first, &mut rng)
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(summarize(mechanism.id(), baseline.id(), &sessions))
}

fn summarize(mechanism: &str, baseline: &str, sessions: &[SessionRecord]) -> EvaluationReport {
    let votes_for = |s: &SessionRecord| s.votes.iter().map(|v| *v as usize).sum::<usize>();
    let votes_for_mechanism: usize = sessions.iter().map(votes_for).sum();
    let votes_total = sessions.len() * NUM_PLAYERS;

    let mut per_condition = Vec::new();
    let mut contribution_curves = Vec::new();
    for tail in TAIL_ENDOWMENTS {
        let group: Vec<&SessionRecord> = sessions
            .iter()
            .filter(|s| s.endowment_condition[1] == tail)
            .collect();
        if group.is_empty() {
            continue;
        }
        let for_mech: usize = group.iter().map(|s| votes_for(s)).sum();
        let total = group.len() * NUM_PLAYERS;
        per_condition.push(ConditionShare {
            tail_endowment: tail,
            groups: group.len(),
            votes_total: total,
            votes_for_mechanism: for_mech,
            share: for_mech as f64 / total as f64,
        });
        for (name, pick) in [
            (mechanism, SessionRecord::episode_a as fn(&SessionRecord) -> &EpisodeRecord),
            (baseline, SessionRecord::episode_b),
        ] {
            let episodes: Vec<&EpisodeRecord> = group.iter().map(|s| pick(s)).collect();
            for (role, seats) in [("head", 0..1), ("tail", 1..NUM_PLAYERS)] {
                let mean_by_round = (0..ROUNDS_PER_STAGE)
                    .map(|t| {
                        let sum: u32 = episodes
                            .iter()
                            .map(|ep| seats.clone().map(|i| ep.rounds[t].state.contributions[i]).sum::<u32>())
                            .sum();
                        sum as f64 / (episodes.len() * seats.len()) as f64
                    })
                    .collect();
                contribution_curves.push(ContributionCurve {
                    mechanism: name.to_string(),
                    tail_endowment: tail,
                    role: role.to_string(),
                    mean_by_round,
                });
            }
        }
    }

    let outcomes = sessions
        .iter()
        .flat_map(|s| {
            [(mechanism, s.episode_a()), (baseline, s.episode_b())].map(|(name, ep)| GroupOutcome {
                group_id: s.group_id.clone(),
                mechanism: name.to_string(),
                tail_endowment: s.endowment_condition[1],
                log_welfare: log_welfare(&ep.totals),
                gini: payout_gini(ep),
            })
        })
        .collect();

    EvaluationReport {
        mechanism: mechanism.to_string(),
        baseline: baseline.to_string(),
        groups: sessions.len(),
        votes_total,
        votes_for_mechanism,
        vote_share: votes_for_mechanism as f64 / votes_total as f64,
        per_condition,
        contribution_curves,
        outcomes,
    }
}
