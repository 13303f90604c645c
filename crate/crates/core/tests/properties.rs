//! Invariants checked over random inputs.

use hcmd_core::cohort::{generate_dataset, ArchetypeKind, ArchetypeSpec, CohortConfig, SimGroup, VoterRule};
use hcmd_core::game::{
    compute_round, endowment_condition, run_stage, EpisodeRecord, LiberalEgalitarian, Mechanism,
    ProportionalToContribution, RoundRecord, RoundState, SessionRecord, StrictEgalitarian,
    NUM_PLAYERS, TAIL_ENDOWMENTS,
};
use hcmd_core::mechanism::{GraphMechanism, MechanismConfig};
use hcmd_core::metagame::{build_payoff_matrix, check_convergence};
use hcmd_core::nn::{graph_block_forward, init_graph_block, softmax, Activation, GraphBlockShape, Matrix, ParamSet, Tape};
use hcmd_core::participant::{
    contribution_cross_entropy, contribution_forward, init_contribution_model, init_vote_model,
    vote_forward, ContributionShape, ParticipantModel, FRAME_DIM, VOTE_FEATURES,
};
use hcmd_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn graph(seed: u64) -> GraphMechanism {
    GraphMechanism::random("g", MechanismConfig::default(), &mut stream(seed, &["prop-mech"], &[]))
}

fn mechanism(kind: usize, seed: u64) -> Box<dyn Mechanism> {
    match kind {
        0 => Box::new(StrictEgalitarian),
        1 => Box::new(LiberalEgalitarian),
        2 => Box::new(ProportionalToContribution),
        _ => Box::new(graph(seed)),
    }
}

fn kind() -> impl Strategy<Value = ArchetypeKind> {
    prop_oneof![
        Just(ArchetypeKind::FreeRider),
        Just(ArchetypeKind::FullContributor),
        Just(ArchetypeKind::Reciprocator),
        Just(ArchetypeKind::PayoffLearner),
        Just(ArchetypeKind::UniformRandom),
    ]
}

fn voter() -> impl Strategy<Value = VoterRule> {
    prop_oneof![
        Just(VoterRule::OwnWelfare),
        Just(VoterRule::GroupWelfare),
        Just(VoterRule::Fairness),
        Just(VoterRule::Random),
    ]
}

fn archetype() -> impl Strategy<Value = ArchetypeSpec> {
    (kind(), voter(), 0.0..1.5f64, -1.0..1.0f64, 0.0..=1.0f64).prop_map(|(k, v, noise, bias, step)| ArchetypeSpec {
        noise,
        bias,
        step,
        ..ArchetypeSpec::new(k, v)
    })
}

/// Moves seat `perm[i]` to seat `i` everywhere in a session.
fn permute_session(s: &SessionRecord, perm: [usize; NUM_PLAYERS]) -> SessionRecord {
    let p = |a: [u32; NUM_PLAYERS]| -> [u32; NUM_PLAYERS] { std::array::from_fn(|i| a[perm[i]]) };
    let pf = |a: [f64; NUM_PLAYERS]| -> [f64; NUM_PLAYERS] { std::array::from_fn(|i| a[perm[i]]) };
    let episode = |e: &EpisodeRecord| EpisodeRecord {
        mechanism_id: e.mechanism_id.clone(),
        rounds: e
            .rounds
            .iter()
            .map(|r| {
                let mut r: RoundRecord = *r;
                r.state.endowments = p(r.state.endowments);
                r.state.contributions = p(r.state.contributions);
                r.weights.0 = pf(r.weights.0);
                r.outcome.payouts = pf(r.outcome.payouts);
                r.outcome.kept = pf(r.outcome.kept);
                r
            })
            .collect(),
        totals: pf(e.totals),
    };
    SessionRecord {
        endowment_condition: p(s.endowment_condition),
        stage1: episode(&s.stage1),
        stage2: episode(&s.stage2),
        stage3: s.stage3.as_ref().map(episode),
        votes: std::array::from_fn(|i| s.votes[perm[i]]),
        ..s.clone()
    }
}

fn permutation() -> impl Strategy<Value = [usize; NUM_PLAYERS]> {
    Just(vec![0usize, 1, 2, 3])
        .prop_shuffle()
        .prop_map(|v| [v[0], v[1], v[2], v[3]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rounds_conserve_the_fund_and_stay_on_the_simplex(
        kind in 0usize..4,
        seed in any::<u64>(),
        members in proptest::array::uniform4(archetype()),
        tail in proptest::sample::select(TAIL_ENDOWMENTS.to_vec()),
    ) {
        let m = mechanism(kind, seed);
        let ep = run_stage(m.as_ref(), &SimGroup { members }, endowment_condition(tail), seed).unwrap();
        ep.validate().unwrap();
        let mut totals = [0.0; NUM_PLAYERS];
        for r in &ep.rounds {
            let coins: u32 = r.state.contributions.iter().sum();
            prop_assert!((r.outcome.payouts.iter().sum::<f64>() - 1.6 * coins as f64).abs() < 1e-9);
            prop_assert!(r.weights.0.iter().all(|w| *w >= 0.0));
            prop_assert!((r.weights.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for i in 0..NUM_PLAYERS {
                prop_assert!(r.state.contributions[i] <= r.state.endowments[i]);
                totals[i] += (r.state.endowments[i] - r.state.contributions[i]) as f64 + r.outcome.payouts[i];
            }
        }
        for i in 0..NUM_PLAYERS {
            prop_assert!((totals[i] - ep.totals[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn selfish_payoff_is_monotone_in_own_contribution(
        tail in proptest::sample::select(TAIL_ENDOWMENTS.to_vec()),
        seat in 0usize..NUM_PLAYERS,
        others in proptest::array::uniform4(0u32..=10),
    ) {
        let e = endowment_condition(tail);
        let reward = |m: &dyn Mechanism, own: u32| {
            let mut c: [u32; NUM_PLAYERS] = std::array::from_fn(|j| others[j].min(e[j]));
            c[seat] = own;
            let state = RoundState::new(1, e, c).unwrap();
            compute_round(&state, &m.weights(&e, &c)).unwrap().rewards()[seat]
        };
        for own in 0..e[seat] {
            let (s0, s1) = (reward(&StrictEgalitarian, own), reward(&StrictEgalitarian, own + 1));
            prop_assert!((s0 - s1 - 0.6).abs() < 1e-9);
            prop_assert!(reward(&ProportionalToContribution, own + 1) > reward(&ProportionalToContribution, own));
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-50.0..50.0f64, 1..12)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut tape = Tape::new();
        let v = tape.constant(Matrix::row_vector(logits.clone()));
        let s = tape.softmax_rows(v);
        prop_assert!((tape.value(s).sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_contribution_distribution(
        seed in any::<u64>(),
        e in 0u32..=10,
        len in 1usize..=10,
    ) {
        let mut rng = stream(seed, &["prop-frames"], &[]);
        let p = init_contribution_model(ContributionShape::LARGE, &mut rng);
        let frames: Vec<[f64; FRAME_DIM]> = (0..len)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let probs = contribution_forward(&p, &frames, e).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(probs[..=e as usize].iter().all(|x| *x > 0.0));
        prop_assert!(probs[e as usize + 1..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn vote_forward_is_swap_symmetric(seed in any::<u64>()) {
        let mut rng = stream(seed, &["prop-vote"], &[]);
        let mut p = init_vote_model();
        p.insert("vote.w", Matrix::from_vec(VOTE_FEATURES, 1, (0..VOTE_FEATURES).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap());
        p.insert("vote.b", Matrix::scalar(rng.random_range(-1.0..1.0)));
        let a: Vec<f64> = (0..VOTE_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..VOTE_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let (pa, pb) = vote_forward(&p, &a, &b).unwrap();
        let (qb, qa) = vote_forward(&p, &b, &a).unwrap();
        prop_assert_eq!((pa, pb), (qa, qb));
        prop_assert!((pa + pb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_block_is_permutation_equivariant(seed in any::<u64>(), perm in permutation()) {
        let mut rng = stream(seed, &["prop-graph"], &[]);
        let mut p = ParamSet::new();
        init_graph_block(&mut p, "gn", GraphBlockShape { input: 3, hidden: 6 }, &mut rng);
        let nodes = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut permuted = Matrix::zeros(4, 3);
        for i in 0..4 {
            permuted.row_mut(i).copy_from_slice(nodes.row(perm[i]));
        }
        let run = |m: &Matrix| {
            let mut tape = Tape::new();
            let n = tape.constant(m.clone());
            let out = graph_block_forward(&mut tape, &p, "gn", n, Activation::Relu, false).unwrap();
            tape.value(out).clone()
        };
        let (out, out_p) = (run(&nodes), run(&permuted));
        for i in 0..4 {
            prop_assert_eq!(out_p.row(i), out.row(perm[i]));
        }
    }

    #[test]
    fn symmetric_inputs_split_evenly_and_policy_is_stateless(
        seed in any::<u64>(),
        e in 0u32..=10,
        c in 0u32..=10,
        other in proptest::array::uniform4(0u32..=10),
    ) {
        let m = graph(seed);
        let c = c.min(e);
        prop_assert_eq!(m.weights(&[e; 4], &[c; 4]).0, [0.25; 4]);
        let tail = endowment_condition(4);
        let cs = other.map(|x| x.min(4));
        let first = m.weights(&tail, &cs);
        let _ = m.weights(&[e; 4], &[c; 4]);
        prop_assert_eq!(m.weights(&tail, &cs), first);
    }

    #[test]
    fn contribution_cross_entropy_ignores_seat_labels(seed in any::<u64>(), perm in permutation()) {
        let cohort = CohortConfig {
            groups_per_iteration: 3,
            ..CohortConfig::default()
        };
        let sessions = generate_dataset(&cohort, &graph(seed), 1, seed).unwrap();
        let permuted: Vec<SessionRecord> = sessions.iter().map(|s| permute_session(s, perm)).collect();
        let p = init_contribution_model(ContributionShape::SMALL, &mut stream(seed, &["prop-ce"], &[]));
        let a = contribution_cross_entropy(&p, &sessions.iter().collect::<Vec<_>>()).unwrap();
        let b = contribution_cross_entropy(&p, &permuted.iter().collect::<Vec<_>>()).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn simulated_sessions_validate(
        seed in any::<u64>(),
        archetypes in proptest::collection::vec(archetype(), 1..4),
    ) {
        let n = archetypes.len() as f64;
        let cohort = CohortConfig {
            archetypes: archetypes.into_iter().map(|a| ArchetypeSpec { weight: 1.0 / n, ..a }).collect(),
            groups_per_iteration: 5,
            group_schedule: None,
            drift: None,
        };
        for s in generate_dataset(&cohort, &graph(seed), 1, seed).unwrap() {
            s.validate().unwrap();
        }
    }
}

#[test]
fn random_policy_is_on_the_simplex_over_the_full_grid() {
    for seed in 0..2 {
        let m = graph(seed);
        for tail in TAIL_ENDOWMENTS {
            let e = endowment_condition(tail);
            for code in 0..11 * (tail + 1).pow(3) {
                let c = [code % 11, code / 11 % (tail + 1), code / 11 / (tail + 1) % (tail + 1), code / 11 / (tail + 1) / (tail + 1)];
                let w = m.weights(&e, &c).0;
                assert!(w.iter().all(|x| *x >= 0.0), "{w:?}");
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{w:?}");
            }
        }
    }
}

#[test]
fn payoff_matrix_is_constant_sum() {
    let mut p = init_contribution_model(ContributionShape::SMALL, &mut stream(1, &["prop-meta"], &[]));
    p.extend(init_vote_model());
    let mut rng = stream(2, &["prop-meta-w"], &[]);
    for x in p.get_mut("vote.w").unwrap().data_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let model = ParticipantModel::new(p).unwrap();
    let config = MechanismConfig { hidden: 8, ..MechanismConfig::default() };
    let checkpoints: Vec<GraphMechanism> = (0..3)
        .map(|k| GraphMechanism::random(format!("theta-{k:02}"), config, &mut stream(k, &["prop-ckpt"], &[])))
        .collect();
    let m = build_payoff_matrix(&checkpoints, &model, 20, 3).unwrap();
    for i in 0..3 {
        // Self-play is sampled, so the diagonal is only near one half.
        assert!((m.values[i][i] - 0.5).abs() < 0.1, "{:?}", m.values);
        for j in (0..3).filter(|j| *j != i) {
            assert!((m.values[i][j] + m.values[j][i] - 1.0).abs() < 1e-12, "{:?}", m.values);
        }
    }
    let again = build_payoff_matrix(&checkpoints, &model, 20, 3).unwrap();
    assert_eq!(m, again);
    assert_eq!(check_convergence(&m, 0.02), check_convergence(&again, 0.02));
}
