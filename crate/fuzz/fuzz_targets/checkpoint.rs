//! Checkpoint decoding must reject malformed bytes without panicking, and
//! anything it accepts must re-encode to a checkpoint that decodes the same.

#![no_main]

use hcmd_core::nn::ParamSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = ParamSet::from_checkpoint_bytes(data) {
        let bytes = params.to_checkpoint_bytes();
        let again = ParamSet::from_checkpoint_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.to_checkpoint_bytes(), bytes);
    }
});
