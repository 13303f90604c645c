//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `HCMD_ACCEPTANCE=1,2,3` restricts the run to the listed criteria.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hcmd_core::cohort::{
    generate_dataset, reciprocator_level, ArchetypeKind, ArchetypeSpec, CohortConfig, DriftSpec,
    SimGroup, VoterRule,
};
use hcmd_core::config::PipelineConfig;
use hcmd_core::game::{
    compute_round, endowment_condition, run_stage, LiberalEgalitarian, Mechanism,
    ProportionalToContribution, RedistributionWeights, RoundState, SessionRecord,
    StrictEgalitarian, HEAD_ENDOWMENT, NUM_PLAYERS, ROUNDS_PER_STAGE,
    TAIL_ENDOWMENTS,
};
use hcmd_core::mechanism::{export_policy_heatmap, weights_on_tape, GraphMechanism, MechanismConfig};
use hcmd_core::metagame::MetaGameMatrix;
use hcmd_core::nn::{
    graph_block_forward, grad_check, init_graph_block, init_linear, init_lstm, linear_forward,
    lstm_forward, softmax_cross_entropy, Activation, GradCheckReport, GraphBlockShape, LstmState,
    Matrix, ParamSet, Tape, Var,
};
use hcmd_core::participant::{
    contribution_cross_entropy, contribution_step, crossval_matrix, fit_participant_model,
    init_contribution_model, init_vote_model, train_contribution_model, train_vote_model,
    tune_hyperparameters, vote_accuracy, ContributionShape, ContributionState,
    ContributionTraining, ModelGrid, ParticipantModel, FRAME_DIM,
};
use hcmd_core::pipeline::{evaluate, Population, Run, HEATMAP_THRESHOLD};
use hcmd_core::rng::{stream, StreamRng};
use hcmd_core::selfplay::{play_on_tape_with, vote_logits_on_tape, MechanismRef};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(limit: Duration, started: Instant, checks: &mut Vec<String>) -> bool {
    let took = started.elapsed();
    let ok = took < limit;
    if !ok {
        checks.push(format!("runtime {:.1}s over {}s", took.as_secs_f64(), limit.as_secs()));
    }
    ok
}

// ---------------------------------------------------------------------------
// 1. Conservation and validity

fn random_weights(rng: &mut StreamRng) -> RedistributionWeights {
    // Flat Dirichlet draw.
    let g: [f64; NUM_PLAYERS] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
    let total: f64 = g.iter().sum();
    RedistributionWeights(g.map(|x| x / total))
}

fn random_mechanisms() -> Vec<GraphMechanism> {
    let configs = [
        MechanismConfig::default(),
        MechanismConfig {
            activation: Activation::Tanh,
            message_passing_rounds: 2,
            hidden: 8,
            ..MechanismConfig::default()
        },
        MechanismConfig {
            include_fraction: false,
            hidden: 4,
            ..MechanismConfig::default()
        },
    ];
    configs
        .iter()
        .enumerate()
        .map(|(k, c)| GraphMechanism::random(format!("random-{k}"), *c, &mut stream(1, &["c1-mech"], &[k as u64])))
        .collect()
}

struct Conservation {
    rounds: usize,
    worst_fund: f64,
    worst_payout: f64,
    worst_simplex: f64,
    infeasible: usize,
}

impl Conservation {
    fn check(&mut self, state: &RoundState, weights: &RedistributionWeights) {
        self.rounds += 1;
        let w = weights.as_array();
        let simplex = w
            .iter()
            .map(|x| (-x).max(0.0))
            .fold((w.iter().sum::<f64>() - 1.0).abs(), f64::max);
        self.worst_simplex = self.worst_simplex.max(simplex);
        let coins: u32 = state.contributions.iter().sum();
        if state.contributions.iter().zip(&state.endowments).any(|(c, e)| c > e) {
            self.infeasible += 1;
        }
        match compute_round(state, weights) {
            Ok(out) => {
                let expected = 1.6 * f64::from(coins);
                self.worst_fund = self.worst_fund.max((out.fund - expected).abs());
                let paid: f64 = out.payouts.iter().sum();
                self.worst_payout = self.worst_payout.max((paid - out.fund).abs());
                for i in 0..NUM_PLAYERS {
                    let kept = f64::from(state.endowments[i] - state.contributions[i]);
                    if out.kept[i] != kept {
                        self.infeasible += 1;
                    }
                }
            }
            Err(_) => self.infeasible += 1,
        }
    }
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let mut rng = stream(1, &["c1"], &[]);
    let graphs = random_mechanisms();
    let mut c = Conservation {
        rounds: 0,
        worst_fund: 0.0,
        worst_payout: 0.0,
        worst_simplex: 0.0,
        infeasible: 0,
    };

    // Direct fuzzing of the round function.
    let mut refused = 0;
    for k in 0..90_000u32 {
        let endowments: [u32; NUM_PLAYERS] = if k % 2 == 0 {
            endowment_condition(TAIL_ENDOWMENTS[rng.random_range(0..5)])
        } else {
            std::array::from_fn(|_| rng.random_range(0..=10))
        };
        let contributions = endowments.map(|e| rng.random_range(0..=e));
        let state = RoundState::new(1 + k % 10, endowments, contributions).expect("feasible by construction");
        let weights = match k % 6 {
            0 => StrictEgalitarian.weights(&endowments, &contributions),
            1 => LiberalEgalitarian.weights(&endowments, &contributions),
            2 => ProportionalToContribution.weights(&endowments, &contributions),
            3 => random_weights(&mut rng),
            _ => graphs[k as usize % graphs.len()].weights(&endowments, &contributions),
        };
        c.check(&state, &weights);

        // Over-contributions must be refused.
        if k % 100 == 0 {
            let mut bad = contributions;
            let i = rng.random_range(0..NUM_PLAYERS);
            bad[i] = endowments[i] + 1;
            let state = RoundState {
                round_index: 1,
                endowments,
                contributions: bad,
            };
            if RoundState::new(1, endowments, bad).is_err() && compute_round(&state, &weights).is_err() {
                refused += 1;
            }
        }
    }

    // Rounds produced by simulated participants and a random participant
    // model under every mechanism family.
    let kinds = [
        ArchetypeKind::FreeRider,
        ArchetypeKind::FullContributor,
        ArchetypeKind::Reciprocator,
        ArchetypeKind::PayoffLearner,
        ArchetypeKind::UniformRandom,
    ];
    let mut model = init_contribution_model(ContributionShape::SMALL, &mut stream(1, &["c1-model"], &[]));
    model.extend(init_vote_model());
    let model = ParticipantModel::new(model).expect("fresh model");
    let baselines: [&dyn Mechanism; 3] = [&StrictEgalitarian, &LiberalEgalitarian, &ProportionalToContribution];
    for ep in 0..1_000u64 {
        let endowments = endowment_condition(TAIL_ENDOWMENTS[ep as usize % 5]);
        let mechanism: &dyn Mechanism = if ep % 2 == 0 {
            baselines[(ep / 2 % 3) as usize]
        } else {
            &graphs[(ep / 2) as usize % graphs.len()]
        };
        let record = if ep % 10 == 9 {
            run_stage(mechanism, &model, endowments, ep)
        } else {
            let members = std::array::from_fn(|_| ArchetypeSpec {
                noise: rng.random_range(0.0..1.0),
                bias: rng.random_range(-0.5..0.5),
                ..ArchetypeSpec::new(kinds[rng.random_range(0..kinds.len())], VoterRule::Random)
            });
            run_stage(mechanism, &SimGroup { members }, endowments, ep)
        };
        match record {
            Ok(record) => {
                for r in &record.rounds {
                    c.check(&r.state, &r.weights);
                }
            }
            Err(_) => c.infeasible += 1,
        }
    }

    let mut notes = Vec::new();
    let mut pass = within(Duration::from_secs(10), started, &mut notes);
    pass &= c.rounds >= 100_000;
    pass &= c.worst_fund <= 1e-12;
    pass &= c.worst_payout < 1e-9;
    pass &= c.worst_simplex < 1e-6;
    pass &= c.infeasible == 0 && refused == 900;
    notes.insert(
        0,
        format!(
            "{} rounds, max |fund - 1.6*sum c| {:.1e}, max |sum payouts - fund| {:.1e}, max simplex error {:.1e}, {} infeasible, {refused}/900 over-contributions refused",
            c.rounds, c.worst_fund, c.worst_payout, c.worst_simplex, c.infeasible
        ),
    );
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Selfish best responses

fn best_responses(mechanism: &dyn Mechanism, endowments: [u32; NUM_PLAYERS], seat: usize, others: [u32; NUM_PLAYERS]) -> Vec<u32> {
    let rewards: Vec<f64> = (0..=endowments[seat])
        .map(|own| {
            let mut c = others;
            c[seat] = own;
            let state = RoundState::new(1, endowments, c).expect("feasible");
            compute_round(&state, &mechanism.weights(&endowments, &c))
                .expect("valid round")
                .rewards()[seat]
        })
        .collect();
    let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..=endowments[seat])
        .filter(|c| rewards[*c as usize] >= best - 1e-12)
        .collect()
}

fn criterion_2() -> Verdict {
    let started = Instant::now();
    let mut cases = 0;
    let mut wrong = Vec::new();
    for tail in TAIL_ENDOWMENTS {
        let endowments = endowment_condition(tail);
        for seat in 0..NUM_PLAYERS {
            let others: Vec<usize> = (0..NUM_PLAYERS).filter(|j| *j != seat).collect();
            let sizes: Vec<u32> = others.iter().map(|j| endowments[*j] + 1).collect();
            let combos: u32 = sizes.iter().product();
            for code in 0..combos {
                let mut c = [0u32; NUM_PLAYERS];
                let mut rest = code;
                for (j, size) in others.iter().zip(&sizes) {
                    c[*j] = rest % size;
                    rest /= size;
                }
                let e = endowments[seat];
                for (mechanism, expected) in [
                    (&StrictEgalitarian as &dyn Mechanism, 0),
                    (&ProportionalToContribution as &dyn Mechanism, e),
                ] {
                    cases += 1;
                    let got = best_responses(mechanism, endowments, seat, c);
                    if got != [expected] {
                        wrong.push(format!("{} e={e} others={c:?}: {got:?}", mechanism.id()));
                    }
                }
            }
        }
    }
    let mut notes = vec![format!("{cases} best-response problems, {} wrong", wrong.len())];
    notes.extend(wrong.into_iter().take(3));
    let fast = within(Duration::from_secs(1), started, &mut notes);
    verdict(fast && notes[0].ends_with(" 0 wrong"), notes.join("; "))
}

// ---------------------------------------------------------------------------
// 3. Gradients

fn matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Gradient check of `Σ W ⊙ f(inputs)` for a fixed random `W`.
fn op_check(
    inputs: &[(&str, usize, usize)],
    seed: u64,
    tolerance: f64,
    f: impl Fn(&mut Tape, &[Var]) -> hcmd_core::Result<Var>,
) -> GradCheckReport {
    let mut rng = stream(seed, &["c3-op"], &[]);
    let mut params = ParamSet::new();
    for (name, r, c) in inputs {
        params.insert(*name, matrix(*r, *c, &mut rng));
    }
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .map(|(name, _, _)| tape.load(p, name, true))
                .collect::<hcmd_core::Result<_>>()?;
            let out = f(&mut tape, &vars)?;
            let (r, c) = tape.value(out).shape();
            let w = matrix(r, c, &mut stream(seed, &["c3-weights"], &[]));
            let weighted = tape.mul_const(out, w)?;
            let loss = tape.sum(weighted);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        tolerance,
    )
    .expect("gradient check runs")
}

fn softmax_loss_check() -> GradCheckReport {
    let mut rng = stream(3, &["c3-xent"], &[]);
    let mut params = ParamSet::new();
    params.insert("logits", matrix(1, 11, &mut rng));
    grad_check(
        |p| {
            let logits = p.get("logits").expect("present").data();
            let (loss, grad) = softmax_cross_entropy(logits, 4);
            let mut g = ParamSet::new();
            g.insert("logits", Matrix::from_vec(1, 11, grad)?);
            Ok((loss, g))
        },
        &params,
        1e-5,
        1e-4,
    )
    .expect("gradient check runs")
}

fn lstm_check() -> GradCheckReport {
    let mut rng = stream(3, &["c3-lstm"], &[]);
    let mut params = ParamSet::new();
    init_lstm(&mut params, "lstm", 3, 4, &mut rng);
    let xs: Vec<Matrix> = (0..5).map(|_| matrix(2, 3, &mut rng)).collect();
    let w = matrix(2, 4, &mut rng);
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let inputs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let init = LstmState::zeros(&mut tape, 2, 4);
            let (outs, last) = lstm_forward(&mut tape, p, "lstm", &inputs, init, true)?;
            let mut terms = Vec::new();
            for o in outs.into_iter().chain([last.c]) {
                let s = tape.mul_const(o, w.clone())?;
                terms.push(tape.sum(s));
            }
            let all = tape.concat_cols(&terms)?;
            let loss = tape.sum(all);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-3,
    )
    .expect("gradient check runs")
}

fn graph_check(activation: Activation) -> GradCheckReport {
    let mut rng = stream(3, &["c3-graph"], &[]);
    let mut params = ParamSet::new();
    init_graph_block(&mut params, "gn", GraphBlockShape { input: 3, hidden: 5 }, &mut rng);
    let nodes = matrix(8, 3, &mut rng);
    let w = matrix(8, 5, &mut rng);
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let n = tape.constant(nodes.clone());
            let out = graph_block_forward(&mut tape, p, "gn", n, activation, true)?;
            let weighted = tape.mul_const(out, w.clone())?;
            let loss = tape.sum(weighted);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-3,
    )
    .expect("gradient check runs")
}

fn linear_check() -> GradCheckReport {
    let mut rng = stream(3, &["c3-linear"], &[]);
    let mut params = ParamSet::new();
    init_linear(&mut params, "l", 4, 3, &mut rng);
    let x = matrix(5, 4, &mut rng);
    let w = matrix(5, 3, &mut rng);
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = linear_forward(&mut tape, p, "l", xv, true)?;
            let weighted = tape.mul_const(y, w.clone())?;
            let loss = tape.sum(weighted);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-4,
    )
    .expect("gradient check runs")
}

/// Contribution network over a whole episode, scored on fixed targets.
fn contribution_model_check() -> GradCheckReport {
    let mut rng = stream(3, &["c3-contrib"], &[]);
    let params = init_contribution_model(ContributionShape::SMALL, &mut rng);
    let endowments = [10u32, 2, 6];
    let frames: Vec<Matrix> = (0..ROUNDS_PER_STAGE).map(|_| matrix(3, FRAME_DIM, &mut rng)).collect();
    let targets: Vec<usize> = (0..ROUNDS_PER_STAGE * 3)
        .map(|k| rng.random_range(0..=endowments[k % 3] as usize))
        .collect();
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let mut state = ContributionState::zeros(&mut tape, p, 3)?;
            let mut terms = Vec::new();
            for (t, f) in frames.iter().enumerate() {
                let x = tape.constant(f.clone());
                let logp = contribution_step(&mut tape, p, &mut state, x, &endowments, true)?;
                let picks = (0..3).map(|r| r * 11 + targets[t * 3 + r]).collect();
                let chosen = tape.gather(logp, picks, 3, 1)?;
                terms.push(tape.sum(chosen));
            }
            let all = tape.concat_cols(&terms)?;
            let loss = tape.sum(all);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-3,
    )
    .expect("gradient check runs")
}

fn mechanism_check() -> GradCheckReport {
    let config = MechanismConfig::default();
    let params = config.init(&mut stream(3, &["c3-mech"], &[]));
    let endowments: Vec<[u32; NUM_PLAYERS]> = TAIL_ENDOWMENTS.iter().map(|t| endowment_condition(*t)).collect();
    let mut rng = stream(3, &["c3-mech-c"], &[]);
    let contributions: Vec<[u32; NUM_PLAYERS]> = endowments.iter().map(|e| e.map(|x| rng.random_range(0..=x))).collect();
    let w = matrix(endowments.len(), NUM_PLAYERS, &mut rng);
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let out = weights_on_tape(&mut tape, p, &config, &endowments, &contributions, true)?;
            let weighted = tape.mul_const(out, w.clone())?;
            let loss = tape.sum(weighted);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-3,
    )
    .expect("gradient check runs")
}

/// The pathwise chain of a self-play episode: mechanism weights, payouts,
/// later contribution likelihoods and vote logits, with contributions held
/// fixed.
fn episode_chain_check() -> GradCheckReport {
    let pm = common::participants(3);
    let config = MechanismConfig {
        hidden: 8,
        ..MechanismConfig::default()
    };
    let params = config.init(&mut stream(3, &["c3-chain"], &[]));
    let endowments: Vec<[u32; NUM_PLAYERS]> = TAIL_ENDOWMENTS.iter().map(|t| endowment_condition(*t)).collect();
    let w = matrix(endowments.len(), NUM_PLAYERS, &mut stream(3, &["c3-chain-w"], &[]));
    grad_check(
        |p| {
            let mut tape = Tape::new();
            let mech = MechanismRef { params: p, config: &config };
            let eps = play_on_tape_with(&mut tape, mech, &pm, &endowments, 4, true, |t, row, probs| {
                (row * 7 + t * 3) % probs.iter().filter(|x| **x > 0.0).count()
            })?;
            let logits = vote_logits_on_tape(&mut tape, &pm, &eps)?;
            let weighted = tape.mul_const(logits, w.clone())?;
            let mut terms = vec![tape.sum(weighted)];
            for lp in &eps.chosen_logp {
                terms.push(tape.sum(*lp));
            }
            let all = tape.concat_cols(&terms)?;
            let loss = tape.sum(all);
            Ok((tape.value(loss).scalar_value(), tape.backward(loss)?))
        },
        &params,
        1e-5,
        1e-3,
    )
    .expect("gradient check runs")
}

fn gradient_reports() -> Vec<(&'static str, f64, GradCheckReport)> {
    let loose = 1e-3;
    let tight = 1e-4;
    vec![
        ("linear", tight, linear_check()),
        ("softmax_rows", tight, op_check(&[("a", 3, 5)], 1, tight, |t, v| Ok(t.softmax_rows(v[0])))),
        (
            "log_softmax_masked",
            tight,
            op_check(&[("a", 3, 5)], 2, tight, |t, v| {
                let l = t.log_softmax_masked(v[0], vec![5, 2, 3])?;
                t.gather(l, vec![0, 1, 2, 3, 4, 5, 6, 10, 11, 12], 1, 10)
            }),
        ),
        ("softmax_cross_entropy", tight, softmax_loss_check()),
        ("lstm", loose, lstm_check()),
        ("graph_block_relu", loose, graph_check(Activation::Relu)),
        ("graph_block_tanh", loose, graph_check(Activation::Tanh)),
        ("contribution_model", loose, contribution_model_check()),
        ("mechanism_policy", loose, mechanism_check()),
        ("selfplay_episode_chain", loose, episode_chain_check()),
        ("matmul", loose, op_check(&[("a", 3, 4), ("b", 4, 2)], 3, loose, |t, v| t.matmul(v[0], v[1]))),
        ("add_row", loose, op_check(&[("a", 3, 4), ("r", 1, 4)], 4, loose, |t, v| t.add_row(v[0], v[1]))),
        ("add", loose, op_check(&[("a", 3, 4), ("b", 3, 4)], 5, loose, |t, v| t.add(v[0], v[1]))),
        ("sub", loose, op_check(&[("a", 3, 4), ("b", 3, 4)], 6, loose, |t, v| t.sub(v[0], v[1]))),
        ("mul", loose, op_check(&[("a", 3, 4), ("b", 3, 4)], 7, loose, |t, v| t.mul(v[0], v[1]))),
        (
            "mul_const",
            loose,
            op_check(&[("a", 3, 4)], 8, loose, |t, v| {
                t.mul_const(v[0], Matrix::from_vec(3, 4, (0..12).map(|k| k as f64 - 5.5).collect())?)
            }),
        ),
        ("scale", loose, op_check(&[("a", 3, 4)], 9, loose, |t, v| Ok(t.scale(v[0], -0.7)))),
        ("relu", loose, op_check(&[("a", 3, 4)], 10, loose, |t, v| Ok(t.relu(v[0])))),
        ("tanh", loose, op_check(&[("a", 3, 4)], 11, loose, |t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", loose, op_check(&[("a", 3, 4)], 12, loose, |t, v| Ok(t.sigmoid(v[0])))),
        ("concat_cols", loose, op_check(&[("a", 3, 2), ("b", 3, 3)], 13, loose, |t, v| t.concat_cols(&[v[0], v[1], v[0]]))),
        ("slice_cols", loose, op_check(&[("a", 3, 5)], 14, loose, |t, v| t.slice_cols(v[0], 1, 3))),
        ("gather", loose, op_check(&[("a", 3, 4)], 15, loose, |t, v| t.gather(v[0], vec![0, 5, 5, 11, 2, 7], 2, 3))),
        ("reshape", loose, op_check(&[("a", 3, 4)], 16, loose, |t, v| t.reshape(v[0], 2, 6))),
        ("group_sum", loose, op_check(&[("a", 6, 4)], 17, loose, |t, v| t.group_sum(v[0], 3))),
        (
            "row_mix",
            loose,
            op_check(&[("a", 3, 2)], 18, loose, |t, v| t.row_mix(v[0], (0..24).map(|k| (k as f64 * 0.37).sin()).collect(), 4)),
        ),
        ("sum", loose, op_check(&[("a", 3, 4)], 19, loose, |t, v| Ok(t.sum(v[0])))),
        ("mean", loose, op_check(&[("a", 3, 4)], 20, loose, |t, v| Ok(t.mean(v[0])))),
    ]
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let reports = gradient_reports();
    let failing: Vec<String> = reports
        .iter()
        .filter(|(_, _, r)| !r.passed)
        .map(|(name, tol, r)| format!("{name} {:.1e} >= {tol:.0e}", r.max_relative_error))
        .collect();
    let worst = reports
        .iter()
        .map(|(name, _, r)| (r.max_relative_error, *name))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let mut notes = vec![format!(
        "{} finite-difference checks, {} failing, worst {:.1e} ({})",
        reports.len(),
        failing.len(),
        worst.0,
        worst.1
    )];
    notes.extend(failing.iter().cloned());

    // Contributions in {0, 1} for one round, then larger toys that reach
    // three options per seat and the recurrent path through round two.
    let toys = [
        (common::Toy { endowment: 1, rounds: 1 }, 33),
        (common::Toy { endowment: 2, rounds: 1 }, 31),
        (common::Toy { endowment: 1, rounds: 2 }, 32),
    ];
    let mut estimator_ok = true;
    for (toy, seed) in toys {
        let checks = common::compare_with_enumeration(toy, seed, 100);
        let inside = checks.iter().filter(|c| c.within(3.0)).count();
        let signal = checks.iter().all(|c| c.exact.abs() > 1e-6);
        estimator_ok &= inside == checks.len() && signal;
        let worst = checks
            .iter()
            .map(|c| (c.mean - c.exact).abs() / c.se)
            .fold(0.0, f64::max);
        notes.push(format!(
            "{}-round toy with endowment {} at 1e5 games: {inside}/{} directions within 3 SE (worst {worst:.2} SE)",
            toy.rounds,
            toy.endowment,
            checks.len()
        ));
    }
    let fast = within(Duration::from_secs(120), started, &mut notes);
    verdict(failing.is_empty() && estimator_ok && fast, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Imitation recovery

const PLANTED_NOISE: f64 = 0.2;

fn planted_cohort(voter: VoterRule, groups: usize) -> CohortConfig {
    CohortConfig {
        groups_per_iteration: groups,
        ..CohortConfig::single(ArchetypeSpec {
            noise: PLANTED_NOISE,
            ..ArchetypeSpec::new(ArchetypeKind::Reciprocator, voter)
        })
    }
}

/// Probability that a reciprocator with target fraction `level` puts in `c`
/// of `e` coins: the Gaussian mass rounding to `c`, with both tails clamped.
fn planted_probability(spec: &ArchetypeSpec, level: f64, e: u32, c: u32) -> f64 {
    let ef = f64::from(e);
    let n = Normal::new(ef * level, ef * spec.noise).expect("positive noise");
    let lower = if c == 0 { 0.0 } else { n.cdf(f64::from(c) - 0.5) };
    let upper = if c == e { 1.0 } else { n.cdf(f64::from(c) + 0.5) };
    upper - lower
}

/// Mean `-ln p` of the recorded contributions under the planted policy: the
/// conditional entropy the imitation model should approach.
fn planted_cross_entropy(spec: &ArchetypeSpec, sessions: &[&SessionRecord]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in sessions {
        for ep in [&s.stage1, &s.stage2] {
            for t in 0..ep.rounds.len() {
                let level = reciprocator_level(spec, &ep.rounds[..t]);
                let state = &ep.rounds[t].state;
                for i in 0..NUM_PLAYERS {
                    let p = planted_probability(spec, level, state.endowments[i], state.contributions[i]);
                    total -= p.ln();
                    n += 1;
                }
            }
        }
    }
    total / n as f64
}

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let mut notes = Vec::new();

    let contrib = planted_cohort(VoterRule::OwnWelfare, 2000);
    let spec = contrib.archetypes[0];
    let train = generate_dataset(&contrib, &LiberalEgalitarian, 1, 41).expect("dataset");
    let held_out = generate_dataset(&CohortConfig { groups_per_iteration: 500, ..contrib.clone() }, &LiberalEgalitarian, 1, 42)
        .expect("dataset");
    let train: Vec<&SessionRecord> = train.iter().collect();
    let held_out: Vec<&SessionRecord> = held_out.iter().collect();
    let training = ContributionTraining::default();
    let (params, _) =
        train_contribution_model(&train, ContributionShape::LARGE, 0.0, &training, 43).expect("training");
    let model_ce = contribution_cross_entropy(&params, &held_out).expect("cross-entropy");
    let planted = planted_cross_entropy(&spec, &held_out);
    let gap = (model_ce - planted) / planted;
    let contrib_ok = gap.abs() <= 0.05;
    notes.push(format!(
        "contribution CE {model_ce:.4} vs planted conditional entropy {planted:.4} ({:+.2}%)",
        100.0 * gap
    ));

    // Votes: same cohort, grid-selected regularization, scored on unseen groups.
    let grid = ModelGrid {
        shapes: vec![ContributionShape::SMALL],
        contribution_l2: vec![0.0],
        ..ModelGrid::default()
    };
    let tuned = tune_hyperparameters(&train, &grid, &training, 44).expect("tuning");
    let vote = train_vote_model(&train, tuned.selected.vote_l2).expect("vote training");
    let accuracy = vote_accuracy(&vote, &held_out).expect("accuracy");
    let vote_ok = accuracy > 0.9;
    notes.push(format!(
        "own-welfare vote accuracy {:.2}% (l2 {})",
        100.0 * accuracy,
        tuned.selected.vote_l2
    ));
    let fast = within(Duration::from_secs(600), started, &mut notes);
    verdict(contrib_ok && vote_ok && fast, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 5. End-to-end loop, 7. heatmap trend, 8. determinism

const LOOP_ITERATIONS: usize = 7;
const LOOP_SEED: u64 = 5;

fn loop_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        seed: LOOP_SEED,
        max_iterations: LOOP_ITERATIONS,
        ..PipelineConfig::default()
    };
    c.cohort.groups_per_iteration = 200;
    c.optimize.batch_size = 200;
    c
}

fn run_loop(root: &Path) -> (Run, Duration) {
    let started = Instant::now();
    let mut run = Run::create(root, loop_config()).expect("fresh run");
    run.run_loop(LOOP_ITERATIONS, false).expect("loop");
    (run, started.elapsed())
}

fn final_matrix(run: &Run) -> MetaGameMatrix {
    let last = run.manifest().completed().last().expect("an iteration").clone();
    let bytes = last.metagame.expect("metagame ran").matrix.read(run.root()).expect("matrix");
    serde_json::from_slice(&bytes).expect("matrix json")
}

/// Adjacent decreases of the row means, as positive sizes.
fn inversions(rows: &[f64]) -> Vec<f64> {
    rows.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect()
}

fn criterion_5(run: &Run, took: Duration) -> Verdict {
    let mut notes = Vec::new();
    let matrix = final_matrix(run);
    let rows: Vec<f64> = (1..matrix.len()).map(|i| matrix.mean_against_earlier(i).expect("row")).collect();
    let inv = inversions(&rows);
    let monotone = inv.len() <= 1 && inv.iter().all(|d| *d <= 0.02);
    notes.push(format!(
        "row means vs earlier {:?}, inversions {:?}",
        rows.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
        inv.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
    ));

    let iterations = run.manifest().completed().count();
    let converged = run.manifest().converged_at;
    notes.push(format!("{iterations} iterations, converged at {converged:?}"));

    let last = iterations;
    let mechanism = run.mechanism(last).expect("final mechanism");
    let archetypes = run.config().cohort.archetypes_at(last);
    let report = evaluate(&mechanism, &LiberalEgalitarian, Population::Cohort(&archetypes), 1000, 55).expect("evaluation");
    let share_ok = report.vote_share >= 0.55;
    notes.push(format!(
        "{} vs liberal-egalitarian under the planted cohort: {:.2}% of {} votes",
        report.mechanism,
        100.0 * report.vote_share,
        report.votes_total
    ));
    let fast = took < Duration::from_secs(2 * 3600);
    notes.push(format!("loop {:.0}s", took.as_secs_f64()));
    verdict(monotone && converged.is_some() && share_ok && fast, notes.join("; "))
}

/// Share of heatmap cells, over all tail panels, where the head gets almost
/// nothing.
fn low_share(mechanism: &dyn Mechanism) -> f64 {
    let maps: Vec<_> = TAIL_ENDOWMENTS.iter().map(|t| export_policy_heatmap(mechanism, *t)).collect();
    let cells: usize = maps.iter().map(|m| m.cells.iter().map(Vec::len).sum::<usize>()).sum();
    let low: f64 = maps
        .iter()
        .map(|m| m.low_share_fraction(HEATMAP_THRESHOLD) * m.cells.iter().map(Vec::len).sum::<usize>() as f64)
        .sum();
    low / cells as f64
}

/// Mann-Kendall S: concordant minus discordant pairs against the index.
fn mann_kendall(xs: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            s += (xs[j] > xs[i]) as i64 - (xs[j] < xs[i]) as i64;
        }
    }
    s
}

fn criterion_7(run: Option<&Run>) -> Verdict {
    let mut notes = Vec::new();
    let mut strict_ok = true;
    let mut liberal_err: f64 = 0.0;
    for tail in TAIL_ENDOWMENTS {
        let strict = export_policy_heatmap(&StrictEgalitarian, tail);
        strict_ok &= strict.cells.iter().flatten().all(|x| *x == 0.25);
        let liberal = export_policy_heatmap(&LiberalEgalitarian, tail);
        for h in 0..=HEAD_ENDOWMENT {
            for t in 0..=tail {
                let head = f64::from(h) / 10.0;
                let each_tail = f64::from(t) / f64::from(tail);
                let expected = if h == 0 && t == 0 { 0.25 } else { head / (head + 3.0 * each_tail) };
                liberal_err = liberal_err.max((liberal.head_share(h, t) - expected).abs());
            }
        }
    }
    notes.push(format!("strict cells all 0.25: {strict_ok}; liberal max |err| {liberal_err:.1e}"));
    let mut trend_ok = false;
    if let Some(run) = run {
        let n = run.manifest().completed().count();
        let series: Vec<f64> = (0..=n).map(|k| low_share(&run.mechanism(k).expect("checkpoint"))).collect();
        let s = mann_kendall(&series);
        trend_ok = s > 0 && series[n] > series[0];
        notes.push(format!(
            "low head-share (< {HEATMAP_THRESHOLD}) fraction over checkpoints {:?}, Mann-Kendall S = {s}",
            series.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
        ));
    }
    verdict(strict_ok && liberal_err < 1e-9 && trend_ok, notes.join("; "))
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8(first: &Path) -> Verdict {
    let second = tempfile::tempdir().expect("tempdir");
    run_loop(second.path());
    let a = files(first);
    let b = files(second.path());
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.clone())
        .collect();
    let same_names = names(&a) == names(&b);
    let checkpoints = a.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    let pass = same_names && differing.is_empty() && a.iter().any(|(n, _)| n == "manifest.json");
    verdict(
        pass,
        format!(
            "{} artifacts ({checkpoints} checkpoints) compared, same layout: {same_names}, differing: {:?}",
            a.len(),
            differing
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Drift

fn criterion_6() -> Verdict {
    let iterations = 5;
    let mut cohort = PipelineConfig::default().cohort;
    cohort.groups_per_iteration = 100;
    cohort.drift = Some(DriftSpec {
        bias_per_iteration: 0.1,
        noise_per_iteration: 0.0,
    });
    let model = PipelineConfig::default().model;
    let datasets: Vec<Vec<SessionRecord>> = (1..=iterations)
        .map(|s| generate_dataset(&cohort, &LiberalEgalitarian, s, 61).expect("dataset"))
        .collect();
    // Model s is fitted on every dataset up to s, as in the loop.
    let models: Vec<ParticipantModel> = (1..=iterations)
        .map(|s| {
            let seen: Vec<&SessionRecord> = datasets[..s].iter().flatten().collect();
            let tuned = tune_hyperparameters(&seen, &model.grid, &model.training, 62 + s as u64).expect("tuning");
            fit_participant_model(&seen, &tuned.selected).expect("fit")
        })
        .collect();
    let refs: Vec<Vec<&SessionRecord>> = datasets.iter().map(|d| d.iter().collect()).collect();
    let cv = crossval_matrix(&models, &refs).expect("crossval");
    let upper: Vec<f64> = (0..iterations)
        .flat_map(|i| (i + 1..iterations).map(move |j| (i, j)))
        .map(|(i, j)| cv.contribution[i][j])
        .collect();
    let above = upper.iter().filter(|x| **x > 1.0).count();
    let vote_above = (0..iterations)
        .flat_map(|i| (i + 1..iterations).map(move |j| (i, j)))
        .filter(|(i, j)| cv.vote[*i][*j] > 1.0)
        .count();
    let pass = above as f64 >= 0.8 * upper.len() as f64;
    verdict(
        pass,
        format!(
            "contribution CE ratio > 1 in {above}/{} upper cells {:?}; vote CE ratio > 1 in {vote_above}/{}",
            upper.len(),
            upper.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
            upper.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn selected() -> Vec<usize> {
    match std::env::var("HCMD_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .map(|s| s.trim().parse().expect("criterion numbers"))
            .collect(),
        _ => (1..=8).collect(),
    }
}

fn report(n: usize, started: Instant, v: &Verdict) {
    println!(
        "criterion {n}: {} ({:.1}s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        v.detail
    );
}

fn main() -> ExitCode {
    let wanted = selected();
    let mut failed = Vec::new();
    let mut record = |n: usize, started: Instant, v: Verdict| {
        report(n, started, &v);
        if !v.pass {
            failed.push(n);
        }
    };
    let simple: [(usize, fn() -> Verdict); 4] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4)];
    for (n, f) in simple {
        if wanted.contains(&n) {
            let t = Instant::now();
            record(n, t, f());
        }
    }

    let needs_loop = [5, 7, 8].iter().any(|n| wanted.contains(n));
    let dir = tempfile::tempdir().expect("tempdir");
    let looped = needs_loop.then(|| {
        let t = Instant::now();
        (run_loop(dir.path()), t)
    });
    if wanted.contains(&5) {
        let ((run, took), t) = looped.as_ref().expect("loop ran");
        record(5, *t, criterion_5(run, *took));
    }
    if wanted.contains(&6) {
        let t = Instant::now();
        record(6, t, criterion_6());
    }
    if wanted.contains(&7) {
        let t = Instant::now();
        record(7, t, criterion_7(looped.as_ref().map(|((run, _), _)| run)));
    }
    if wanted.contains(&8) {
        let t = Instant::now();
        record(8, t, criterion_8(dir.path()));
    }

    if failed.is_empty() {
        println!("acceptance: all {} selected criteria passed", wanted.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
