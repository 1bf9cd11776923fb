#![no_main]

use cdcma_harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_toml_str(text) {
        let _ = c.validate();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).expect("written config must parse");
        assert_eq!(back.hash(), c.hash());
    }
});
