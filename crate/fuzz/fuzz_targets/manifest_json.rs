#![no_main]

use hcmd_core::pipeline::RunManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = serde_json::from_slice::<RunManifest>(data) {
        let text = serde_json::to_vec(&manifest).expect("manifest serializes");
        let again: RunManifest = serde_json::from_slice(&text).expect("round trip");
        assert_eq!(again, manifest);
    }
});
