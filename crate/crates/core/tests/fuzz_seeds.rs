//! Replays the checked-in fuzz corpus seeds through the same round-trip
//! properties the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use streamnav::env::parse_map;
use streamnav::harness::{decode_checkpoint, encode_checkpoint, parse_config};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn map_seeds_round_trip() {
    for bytes in seeds("parse_map") {
        let map = parse_map(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(parse_map(&map.to_text()).unwrap().to_text(), map.to_text());
    }
}

#[test]
fn config_seeds_round_trip() {
    for bytes in seeds("parse_config") {
        let cfg = parse_config(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for bytes in seeds("decode_checkpoint") {
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&ck), bytes);
    }
}
