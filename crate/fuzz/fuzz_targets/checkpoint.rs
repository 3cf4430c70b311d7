#![no_main]

use libfuzzer_sys::fuzz_target;
use unmix_core::checkpoint::{encode_checkpoint, parse_checkpoint};

mod split;

fuzz_target!(|data: &[u8]| {
    if let Some((manifest, payload)) = split::split(data) {
        if let Ok(state) = parse_checkpoint(manifest, payload) {
            let (m, p) = encode_checkpoint(&state).expect("a parsed checkpoint re-encodes");
            assert!(parse_checkpoint(&m, &p).is_ok());
        }
    }
});
