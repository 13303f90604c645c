//! One dataset line. Accepted records have passed the game validators, so
//! they must serialize and parse back unchanged.

#![no_main]

use hcmd_core::dataset::{parse_session_line, session_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = parse_session_line(line) {
        let text = session_line(&record).expect("valid record serializes");
        assert_eq!(parse_session_line(&text).expect("round trip"), record);
    }
});
