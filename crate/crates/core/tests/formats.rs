use std::path::{Path, PathBuf};

use proptest::prelude::*;

use unmix_core::checkpoint::parse_checkpoint;
use unmix_core::data::{
    cube_from_bundle, encode_payload, parse_bundle, read_cube, supervised_from_bundle, write_cube, HyperCube,
};
use unmix_core::eval::read_report_csv;
use unmix_core::objective::read_history_csv;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn split(data: &[u8]) -> (&[u8], &[u8]) {
    let len = u32::from_le_bytes(data[..4].try_into().unwrap()) as usize;
    data[4..].split_at(len)
}

#[test]
fn corpus_seeds_decode() {
    for (name, data) in corpus("cube_bundle") {
        let (h, p) = split(&data);
        let parsed = parse_bundle(h, p).and_then(|(h, v)| cube_from_bundle(h, v));
        assert_eq!(parsed.is_ok(), name == "seed_cube", "{name}");
    }
    for (name, data) in corpus("supervised_bundle") {
        let (h, p) = split(&data);
        let set = parse_bundle(h, p).and_then(|(h, v)| supervised_from_bundle(h, v));
        assert!(set.is_ok(), "{name}");
    }
    for (name, data) in corpus("checkpoint") {
        let (h, p) = split(&data);
        assert!(parse_checkpoint(h, p).is_ok(), "{name}");
    }
    for (name, data) in corpus("report_csv") {
        assert!(read_report_csv(data.as_slice()).is_ok(), "{name}");
    }
    for (name, data) in corpus("history_csv") {
        assert!(read_history_csv(data.as_slice()).is_ok(), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_round_trips(w in 1usize..5, h in 1usize..5, l in 1usize..6, seed in any::<u64>()) {
        let pixels: Vec<f64> = (0..w * h * l).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 997.0).collect();
        let cube = HyperCube::new(w, h, l, pixels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cube(&dir.path().join("c"), &cube).unwrap();
        prop_assert_eq!(read_cube(&dir.path().join("c")).unwrap(), cube);
    }

    #[test]
    fn arbitrary_headers_never_panic(header in prop::collection::vec(any::<u8>(), 0..200), values in prop::collection::vec(any::<f64>(), 0..40)) {
        let _ = parse_bundle(&header, &encode_payload(&values));
    }

    #[test]
    fn mangled_json_headers_are_rejected_cleanly(
        w in prop::sample::select(vec![0usize, 1, 2, 4, 8, 1 << 40]),
        h in prop::sample::select(vec![0usize, 1, 2, 4, 1 << 33]),
        bands in prop::sample::select(vec![0usize, 1, 2, 4, 8, 1 << 40]),
        role in prop::sample::select(vec!["cube", "supervised", "abundances", "x"]),
    ) {
        let header = format!(r#"{{"width":{w},"height":{h},"bands":{bands},"dtype":"f64le","order":"bip","role":"{role}","endmembers":2}}"#);
        let parsed = parse_bundle(header.as_bytes(), &encode_payload(&[0.5; 8]));
        prop_assert_eq!(parsed.is_ok(), w.checked_mul(h).and_then(|x| x.checked_mul(bands)) == Some(8));
        if let Ok((hd, v)) = parsed {
            prop_assert_eq!(v.len(), hd.value_count().unwrap());
            let _ = cube_from_bundle(hd.clone(), v.clone());
            let _ = supervised_from_bundle(hd, v);
        }
    }

    #[test]
    fn arbitrary_csv_never_panics(text in ".{0,300}") {
        let _ = read_report_csv(text.as_bytes());
        let _ = read_history_csv(text.as_bytes());
    }
}
