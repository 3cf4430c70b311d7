#![no_main]

use libfuzzer_sys::fuzz_target;
use unmix_core::objective::{read_history_csv, write_history_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(history) = read_history_csv(data) {
        let mut out = Vec::new();
        write_history_csv(&mut out, &history).unwrap();
        assert_eq!(read_history_csv(out.as_slice()).unwrap().len(), history.len());
    }
});
