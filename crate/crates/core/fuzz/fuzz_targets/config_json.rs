#![no_main]

use libfuzzer_sys::fuzz_target;
use nanosim::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        // accepted configs survive a round trip
        let again = ExperimentConfig::from_json(&cfg.to_json()).expect("re-parse");
        assert_eq!(cfg, again);
    }
});
