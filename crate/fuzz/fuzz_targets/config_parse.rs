#![no_main]

use drec_core::runner::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let text = cfg.to_toml();
        let again = ExperimentConfig::parse(&text).expect("rendered config parses");
        assert_eq!(again.to_toml(), text);
    }
});
