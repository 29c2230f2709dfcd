#![no_main]

use fedmesh::orchestrator::config::{apply_override, parse_override};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((path, value)) = parse_override(text) {
        assert!(!path.is_empty() && path.iter().all(|p| !p.is_empty()));
        let mut table = toml::Table::new();
        if apply_override(&mut table, &path, value).is_ok() {
            let _ = fedmesh::orchestrator::SimulationConfig::from_table(table);
        }
    }
});
