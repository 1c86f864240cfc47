#![no_main]

use libfuzzer_sys::fuzz_target;
use streamnav::harness::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        // payload may hold NaNs, so compare encodings rather than values
        let bytes = encode_checkpoint(&ck);
        let again = decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(encode_checkpoint(&again), bytes);
    }
});
