//! Toy self-play games small enough to enumerate every contribution
//! outcome, shared by the estimator tests and the acceptance run.
#![allow(dead_code)]

use hcmd_core::game::NUM_PLAYERS;
use hcmd_core::mechanism::MechanismConfig;
use hcmd_core::nn::{ParamSet, Tape};
use hcmd_core::participant::{init_contribution_model, init_vote_model, ContributionShape, ParticipantModel};
use hcmd_core::rng::stream;
use hcmd_core::selfplay::{
    estimate_policy_gradient, play_on_tape_with, vote_logits_on_tape, CurriedGameConfig,
    EstimatorOptions, MechanismRef,
};
use rand::Rng;

/// Every seat holds `endowment` coins for `rounds` rounds.
#[derive(Debug, Clone, Copy)]
pub struct Toy {
    pub endowment: u32,
    pub rounds: usize,
}

impl Toy {
    pub fn endowments(&self) -> [u32; NUM_PLAYERS] {
        [self.endowment; NUM_PLAYERS]
    }

    fn per_round(&self) -> usize {
        (self.endowment as usize + 1).pow(NUM_PLAYERS as u32)
    }

    pub fn outcomes(&self) -> usize {
        self.per_round().pow(self.rounds as u32)
    }
}

pub fn participants(seed: u64) -> ParticipantModel {
    let mut rng = stream(seed, &["participants"], &[]);
    let mut p = init_contribution_model(ContributionShape::SMALL, &mut rng);
    p.extend(init_vote_model());
    for x in p.get_mut("vote.w").unwrap().data_mut() {
        *x = rng.random_range(-2.0..2.0);
    }
    ParticipantModel::new(p).unwrap()
}

pub fn mechanism(seed: u64) -> (MechanismConfig, ParamSet) {
    let config = MechanismConfig {
        hidden: 8,
        ..MechanismConfig::default()
    };
    let params = config.init(&mut stream(seed, &["mechanism"], &[]));
    (config, params)
}

/// Every contribution outcome of a toy episode with its probability and
/// vote logits. Outcome `g` is read as base `e+1` digits, one per seat and
/// round.
pub fn enumerate(
    toy: Toy,
    params: &ParamSet,
    config: &MechanismConfig,
    participants: &ParticipantModel,
) -> Vec<(f64, [f64; NUM_PLAYERS])> {
    let outcomes = toy.outcomes();
    let per_round = toy.per_round();
    let base = toy.endowment as usize + 1;
    let endowments = vec![toy.endowments(); outcomes];
    let mut tape = Tape::new();
    let mech = MechanismRef { params, config };
    let eps = play_on_tape_with(&mut tape, mech, participants, &endowments, toy.rounds, false, |t, row, _| {
        let (g, i) = (row / NUM_PLAYERS, row % NUM_PLAYERS);
        g / per_round.pow(t as u32) % per_round / base.pow(i as u32) % base
    })
    .unwrap();
    let logits = vote_logits_on_tape(&mut tape, participants, &eps).unwrap();
    let logits = tape.value(logits).clone();
    (0..outcomes)
        .map(|g| {
            let logp: f64 = eps
                .chosen_logp
                .iter()
                .map(|lp| (0..NUM_PLAYERS).map(|i| tape.value(*lp).get(g * NUM_PLAYERS + i, 0)).sum::<f64>())
                .sum();
            let l = logits.row(g);
            (logp.exp(), [l[0], l[1], l[2], l[3]])
        })
        .collect()
}

/// Exact objective with episode A played by `a` and B by the frozen `b`.
pub fn exact_objective(
    toy: Toy,
    a: &ParamSet,
    b: &ParamSet,
    config: &MechanismConfig,
    participants: &ParticipantModel,
) -> f64 {
    let ea = enumerate(toy, a, config, participants);
    let eb = enumerate(toy, b, config, participants);
    let mut total = 0.0;
    for (pa, la) in &ea {
        for (pb, lb) in &eb {
            let share: f64 = (0..NUM_PLAYERS).map(|i| 1.0 / (1.0 + (lb[i] - la[i]).exp())).sum::<f64>();
            total += pa * pb * share / NUM_PLAYERS as f64;
        }
    }
    total
}

pub fn dot(grads: &ParamSet, direction: &ParamSet) -> f64 {
    grads
        .iter()
        .map(|(name, g)| {
            let d = direction.get(name).unwrap();
            g.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>()
        })
        .sum()
}

pub fn random_direction(like: &ParamSet, seed: u64) -> ParamSet {
    let mut rng = stream(seed, &["direction"], &[]);
    let mut d = like.zeros_like();
    for (_, m) in d.iter_mut() {
        for x in m.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    let n = d.l2_norm();
    d.scale(1.0 / n);
    d
}

/// Central difference of the exact objective along `direction`, with the
/// opponent held at `params`.
pub fn exact_directional(
    toy: Toy,
    params: &ParamSet,
    config: &MechanismConfig,
    participants: &ParticipantModel,
    direction: &ParamSet,
) -> f64 {
    let h = 1e-5;
    let mut plus = params.clone();
    plus.add_scaled(direction, h).unwrap();
    let mut minus = params.clone();
    minus.add_scaled(direction, -h).unwrap();
    (exact_objective(toy, &plus, params, config, participants)
        - exact_objective(toy, &minus, params, config, participants))
        / (2.0 * h)
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Projections of `batches` independent 1000-game estimates onto each
/// direction.
pub fn projected_estimates(
    toy: Toy,
    params: &ParamSet,
    config: &MechanismConfig,
    participants: &ParticipantModel,
    batches: usize,
    options: EstimatorOptions,
    directions: &[ParamSet],
) -> Vec<Vec<f64>> {
    let game = CurriedGameConfig {
        conditions: vec![toy.endowments()],
        rounds: toy.rounds,
        batch_size: 1000,
        seed: 11,
    };
    let mech = MechanismRef { params, config };
    let mut out = vec![Vec::with_capacity(batches); directions.len()];
    for b in 0..batches {
        let est = estimate_policy_gradient(mech, participants, &game, b as u64, options).unwrap();
        for (o, d) in out.iter_mut().zip(directions) {
            o.push(dot(&est.grads, d));
        }
    }
    out
}

/// One line per direction: sampled mean, its standard error and the exact
/// value, from `batches` thousand sampled games.
pub struct DirectionCheck {
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
}

impl DirectionCheck {
    pub fn within(&self, ses: f64) -> bool {
        (self.mean - self.exact).abs() <= ses * self.se
    }
}

pub fn compare_with_enumeration(toy: Toy, seed: u64, batches: usize) -> Vec<DirectionCheck> {
    let pm = participants(seed);
    let (config, params) = mechanism(seed);
    let directions: Vec<ParamSet> = (0..4).map(|k| random_direction(&params, k)).collect();
    let samples = projected_estimates(toy, &params, &config, &pm, batches, EstimatorOptions::default(), &directions);
    directions
        .iter()
        .zip(&samples)
        .map(|(d, xs)| {
            let (mean, se) = mean_se(xs);
            DirectionCheck {
                mean,
                se,
                exact: exact_directional(toy, &params, &config, &pm, d),
            }
        })
        .collect()
}
