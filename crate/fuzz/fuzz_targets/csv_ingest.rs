#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ingested) = fedmesh::data::parse_csv(data, "label", "fuzz") {
        let d = &ingested.dataset;
        assert!(!d.is_empty());
        assert!(d.labels().iter().all(|&y| y <= 1));
        for i in 0..d.len() {
            assert!(d.row(i).iter().all(|x| x.is_finite()));
        }
    }
});
