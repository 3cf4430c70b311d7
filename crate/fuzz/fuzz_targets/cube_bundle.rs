#![no_main]

use libfuzzer_sys::fuzz_target;
use unmix_core::data::{cube_from_bundle, parse_bundle};

mod split;

fuzz_target!(|data: &[u8]| {
    if let Some((header, payload)) = split::split(data) {
        if let Ok((h, values)) = parse_bundle(header, payload) {
            if let Ok(cube) = cube_from_bundle(h, values) {
                assert_eq!(cube.pixels.len(), cube.num_pixels() * cube.bands);
            }
        }
    }
});
