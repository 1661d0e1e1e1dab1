#![no_main]

use cropkge::config::{format_config, parse_config};
use cropkge::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text, TrainConfig::default()) {
        let back = parse_config(&format_config(&cfg), TrainConfig::default()).unwrap();
        assert_eq!(back, cfg);
    }
});
