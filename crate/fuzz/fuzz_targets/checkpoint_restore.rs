#![no_main]

use std::sync::OnceLock;

use cdcma_core::training::{TrainConfig, Trainer};
use cdcma_harness::ExperimentConfig;
use cdcma_nn::Archive;
use libfuzzer_sys::fuzz_target;

// Same shapes as fixtures/tiny.toml.
fn config() -> &'static TrainConfig {
    static CONFIG: OnceLock<TrainConfig> = OnceLock::new();
    CONFIG.get_or_init(|| {
        let c = ExperimentConfig::from_toml_str(include_str!("../fixtures/tiny.toml")).unwrap();
        c.train_config(1).unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = Archive::decode(data) {
        if let Ok(t) = Trainer::restore(config().clone(), &a) {
            let _ = t.checkpoint(false).encode();
        }
    }
});
