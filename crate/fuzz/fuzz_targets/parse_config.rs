#![no_main]

use libfuzzer_sys::fuzz_target;
use streamnav::harness::parse_config;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = parse_config(text) {
        let again = parse_config(&cfg.to_text()).expect("printed config parses");
        assert_eq!(again.model_hash(), cfg.model_hash());
    }
});
