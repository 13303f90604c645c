//! Synthetic participant populations: archetypes with planted contribution
//! and voting rules, mixed into groups, optionally drifting between
//! iterations.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    endowment_condition, fractional_contribution, run_session, ContributionPolicy, EpisodeRecord,
    Mechanism, RoundRecord, SessionRecord, VotePolicy, NUM_PLAYERS, TAIL_ENDOWMENTS,
};
use crate::metrics::gini;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchetypeKind {
    FreeRider,
    FullContributor,
    Reciprocator,
    PayoffLearner,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoterRule {
    OwnWelfare,
    GroupWelfare,
    /// Prefers the episode whose per-participant payout totals have the
    /// lower Gini coefficient.
    Fairness,
    Random,
}

/// One kind of simulated participant.
///
/// `noise` is the standard deviation of the Gaussian perturbation of the
/// contributed fraction; `bias` shifts the target fraction; `step` is the
/// payoff-learner's adaptation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub kind: ArchetypeKind,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    pub voter: VoterRule,
    pub weight: f64,
}

fn default_step() -> f64 {
    0.3
}

impl ArchetypeSpec {
    pub fn new(kind: ArchetypeKind, voter: VoterRule) -> Self {
        ArchetypeSpec {
            kind,
            noise: 0.0,
            bias: 0.0,
            step: default_step(),
            voter,
            weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.noise, self.bias, self.step, self.weight]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.noise < 0.0 || self.weight < 0.0 || !(0.0..=1.0).contains(&self.step) {
            return Err(Error::Config(format!("invalid archetype {self:?}")));
        }
        Ok(())
    }
}

/// Per-iteration change of every archetype's `bias` and `noise`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSpec {
    pub bias_per_iteration: f64,
    pub noise_per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub archetypes: Vec<ArchetypeSpec>,
    #[serde(default = "default_groups")]
    pub groups_per_iteration: usize,
    /// Overrides `groups_per_iteration` for the listed iterations (1-based);
    /// later iterations reuse the last entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_schedule: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
}

fn default_groups() -> usize {
    50
}

impl CohortConfig {
    pub fn single(spec: ArchetypeSpec) -> Self {
        CohortConfig {
            archetypes: vec![ArchetypeSpec { weight: 1.0, ..spec }],
            groups_per_iteration: default_groups(),
            group_schedule: None,
            drift: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::Config("cohort needs at least one archetype".into()));
        }
        for a in &self.archetypes {
            a.validate()?;
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "archetype weights sum to {total}, expected 1"
            )));
        }
        let schedule_ok = self
            .group_schedule
            .as_ref()
            .is_none_or(|s| !s.is_empty() && s.iter().all(|g| *g >= 1));
        if self.groups_per_iteration == 0 || !schedule_ok {
            return Err(Error::Config("groups per iteration must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of groups collected at iteration `s` (1-based).
    pub fn groups_for(&self, iteration: usize) -> usize {
        match &self.group_schedule {
            Some(s) if !s.is_empty() => s[iteration.saturating_sub(1).min(s.len() - 1)],
            _ => self.groups_per_iteration,
        }
    }

    /// Archetypes as they behave at iteration `s` after drift.
    pub fn archetypes_at(&self, iteration: usize) -> Vec<ArchetypeSpec> {
        let k = iteration.saturating_sub(1) as f64;
        let drift = self.drift.unwrap_or_default();
        self.archetypes
            .iter()
            .map(|a| ArchetypeSpec {
                bias: a.bias + k * drift.bias_per_iteration,
                noise: (a.noise + k * drift.noise_per_iteration).max(0.0),
                ..*a
            })
            .collect()
    }
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn noisy_coins(endowment: u32, level: f64, noise: f64, rng: &mut dyn RngCore) -> u32 {
    let e = endowment as f64;
    let mut x = e * level.clamp(0.0, 1.0);
    if noise > 0.0 {
        x += e * noise * normal(rng);
    }
    x.round().clamp(0.0, e) as u32
}

/// Target fraction of a reciprocator: the previous round's mean group
/// fraction (one half before any round), shifted by `bias`.
pub fn reciprocator_level(spec: &ArchetypeSpec, history: &[RoundRecord]) -> f64 {
    let base = match history.last() {
        None => 0.5,
        Some(r) => {
            (0..NUM_PLAYERS)
                .map(|j| fractional_contribution(r.state.endowments[j], r.state.contributions[j]))
                .sum::<f64>()
                / NUM_PLAYERS as f64
        }
    };
    (base + spec.bias).clamp(0.0, 1.0)
}

/// Target fraction of a payoff learner at seat `i`: starts at one half
/// plus `bias` and after every round moves `step` of the way toward the
/// fraction it contributed in its best-paying round so far.
pub fn payoff_learner_level(spec: &ArchetypeSpec, history: &[RoundRecord], i: usize) -> f64 {
    let mut level = (0.5 + spec.bias).clamp(0.0, 1.0);
    let mut best: Option<(f64, f64)> = None;
    for r in history {
        let reward = r.outcome.rewards()[i];
        let frac = fractional_contribution(r.state.endowments[i], r.state.contributions[i]);
        if best.is_none_or(|(b, _)| reward >= b) {
            best = Some((reward, frac));
        }
        let target = best.expect("set above").1;
        level += spec.step * (target - level);
    }
    level.clamp(0.0, 1.0)
}

/// One archetype's contribution at seat `i`.
pub fn act_contribution(
    spec: &ArchetypeSpec,
    history: &[RoundRecord],
    i: usize,
    endowment: u32,
    rng: &mut dyn RngCore,
) -> u32 {
    match spec.kind {
        ArchetypeKind::FreeRider => 0,
        ArchetypeKind::FullContributor => endowment,
        ArchetypeKind::UniformRandom => rng.random_range(0..=endowment),
        ArchetypeKind::Reciprocator => {
            noisy_coins(endowment, reciprocator_level(spec, history), spec.noise, rng)
        }
        ArchetypeKind::PayoffLearner => {
            noisy_coins(endowment, payoff_learner_level(spec, history, i), spec.noise, rng)
        }
    }
}

fn payout_totals(ep: &EpisodeRecord) -> [f64; NUM_PLAYERS] {
    let mut t = [0.0; NUM_PLAYERS];
    for r in &ep.rounds {
        for (x, p) in t.iter_mut().zip(r.outcome.payouts) {
            *x += p;
        }
    }
    t
}

/// Gini coefficient of the participants' summed payouts over an episode.
pub fn payout_gini(ep: &EpisodeRecord) -> f64 {
    gini(&payout_totals(ep))
}

/// Ballot of seat `i` (`true` = episode `a`). Exact ties are coin flips.
pub fn cast_vote(
    rule: VoterRule,
    a: &EpisodeRecord,
    b: &EpisodeRecord,
    i: usize,
    rng: &mut dyn RngCore,
) -> bool {
    // Larger score wins.
    let (sa, sb) = match rule {
        VoterRule::OwnWelfare => (a.totals[i], b.totals[i]),
        VoterRule::GroupWelfare => (a.totals.iter().sum(), b.totals.iter().sum()),
        VoterRule::Fairness => (-payout_gini(a), -payout_gini(b)),
        VoterRule::Random => (0.0, 0.0),
    };
    if sa == sb {
        rng.random_bool(0.5)
    } else {
        sa > sb
    }
}

/// Four simulated participants, one archetype per seat.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGroup {
    pub members: [ArchetypeSpec; NUM_PLAYERS],
}

impl SimGroup {
    /// Draws each seat independently from the mixture.
    pub fn sample(archetypes: &[ArchetypeSpec], rng: &mut dyn RngCore) -> Self {
        SimGroup {
            members: std::array::from_fn(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in archetypes {
                    acc += a.weight;
                    if u < acc {
                        return *a;
                    }
                }
                *archetypes.last().expect("nonempty mixture")
            }),
        }
    }
}

impl ContributionPolicy for SimGroup {
    fn contribute(
        &self,
        history: &[RoundRecord],
        endowments: &[u32; NUM_PLAYERS],
        rng: &mut dyn RngCore,
    ) -> [u32; NUM_PLAYERS] {
        std::array::from_fn(|i| act_contribution(&self.members[i], history, i, endowments[i], rng))
    }
}

impl VotePolicy for SimGroup {
    fn vote(&self, a: &EpisodeRecord, b: &EpisodeRecord, rng: &mut dyn RngCore) -> [bool; NUM_PLAYERS] {
        std::array::from_fn(|i| cast_vote(self.members[i].voter, a, b, i, rng))
    }
}

/// Tail endowment of the `k`-th group: conditions are cycled so any
/// multiple of five groups covers each equally.
pub fn condition_for_group(k: usize) -> [u32; NUM_PLAYERS] {
    endowment_condition(TAIL_ENDOWMENTS[k % TAIL_ENDOWMENTS.len()])
}

/// ACQUIRE in simulation: every group plays both stages under `mechanism`.
pub fn generate_dataset(
    cohort: &CohortConfig,
    mechanism: &dyn Mechanism,
    iteration: usize,
    seed: u64,
) -> Result<Vec<SessionRecord>> {
    cohort.validate()?;
    let archetypes = cohort.archetypes_at(iteration);
    let n = cohort.groups_for(iteration);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let group = SimGroup::sample(
                &archetypes,
                &mut stream(seed, &["acquire", "members"], &[iteration as u64, k as u64]),
            );
            run_session(
                format!("s{iteration:02}-g{k:04}"),
                mechanism,
                mechanism,
                &group,
                condition_for_group(k),
                k % 2 == 1,
                &mut stream(seed, &["acquire", "session"], &[iteration as u64, k as u64]),
            )
        })
        .collect()
}
