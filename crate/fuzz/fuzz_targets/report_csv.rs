#![no_main]

use libfuzzer_sys::fuzz_target;
use unmix_core::eval::{read_report_csv, write_report_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_report_csv(data) {
        let mut out = Vec::new();
        write_report_csv(&mut out, &rows).unwrap();
        let again = read_report_csv(out.as_slice()).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
