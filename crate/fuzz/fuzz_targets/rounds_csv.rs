#![no_main]

use fedmesh::report::{parse_rounds_csv, rounds_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_rounds_csv(data, "fuzz") {
        let n_edges = records[0].per_edge.len();
        let text = rounds_csv(&records, n_edges).expect("parsed records re-serialize");
        assert_eq!(parse_rounds_csv(text.as_bytes(), "fuzz").unwrap(), records);
        let _ = fedmesh::plot::charts(&records);
    }
});
