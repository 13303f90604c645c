//! Request bodies accepted by the play server.

#![no_main]

use hcmd_play::{ContributeRequest, SessionRequest, VoteRequest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<SessionRequest>(data);
    let _ = serde_json::from_slice::<ContributeRequest>(data);
    let _ = serde_json::from_slice::<VoteRequest>(data);
});
