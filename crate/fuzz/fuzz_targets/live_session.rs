//! Drives one live session with an arbitrary sequence of joins, submissions,
//! votes and timer expiries. Whatever the order, a finished session must
//! produce a record that passes validation.

#![no_main]

use hcmd_core::cohort::{ArchetypeKind, ArchetypeSpec, VoterRule};
use hcmd_play::{LiveSession, MechanismRegistry, Phase, SessionConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&head, ops)) = data.split_first() else {
        return;
    };
    let config = SessionConfig {
        tail_endowment: [2, 4, 6, 8, 10][head as usize % 5],
        mechanism_a: "liberal-egalitarian".into(),
        mechanism_b: "strict-egalitarian".into(),
        b_first: head & 0x80 != 0,
    };
    let bot = ArchetypeSpec::new(ArchetypeKind::Reciprocator, VoterRule::OwnWelfare);
    let registry = MechanismRegistry::with_baselines();
    let mut s = LiveSession::new("fuzz", &config, &registry, bot, head as u64).unwrap();
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for pair in ops.chunks(2) {
        let (op, arg) = (pair[0], pair.get(1).copied().unwrap_or(0));
        match op % 5 {
            0 => {
                if let Ok((t, _)) = s.join() {
                    tokens.push((t.seat, t.token));
                }
            }
            1 | 2 => {
                if let Some((seat, token)) = tokens.get(arg as usize % tokens.len().max(1)) {
                    let _ = s.submit_contribution(*seat, token, (arg % 12) as u32);
                }
            }
            3 => {
                if let Some((seat, token)) = tokens.get(arg as usize % tokens.len().max(1)) {
                    let _ = s.submit_vote(*seat, token, arg % 3);
                }
            }
            _ => {
                let epoch = if arg & 1 == 0 { s.epoch() } else { s.epoch().wrapping_sub(1) };
                let _ = s.timeout(epoch);
            }
        }
        let _ = s.view(None);
    }
    if s.phase() == Phase::Done {
        let record = s.take_record().expect("a finished session has a record");
        record.validate().expect("persisted records pass the game validators");
    }
});
