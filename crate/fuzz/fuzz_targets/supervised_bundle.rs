#![no_main]

use libfuzzer_sys::fuzz_target;
use unmix_core::data::{parse_bundle, supervised_from_bundle};

mod split;

fuzz_target!(|data: &[u8]| {
    if let Some((header, payload)) = split::split(data) {
        if let Ok((h, values)) = parse_bundle(header, payload) {
            if let Ok(set) = supervised_from_bundle(h, values) {
                for s in &set {
                    assert_eq!(s.m.nrows(), s.y.len());
                    assert_eq!(s.m.ncols(), s.a.len());
                }
            }
        }
    }
});
