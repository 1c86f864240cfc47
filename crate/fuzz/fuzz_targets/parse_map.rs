#![no_main]

use libfuzzer_sys::fuzz_target;
use streamnav::env::parse_map;

fuzz_target!(|text: &str| {
    if let Ok(map) = parse_map(text) {
        let again = parse_map(&map.to_text()).expect("printed map parses");
        assert_eq!(again.to_text(), map.to_text());
    }
});
