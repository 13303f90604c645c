#![no_main]

use hcmd_core::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = PipelineConfig::from_toml_str(text) {
        let again = config.to_toml_string().expect("valid config serializes");
        assert_eq!(PipelineConfig::from_toml_str(&again).expect("round trip"), config);
    }
});
