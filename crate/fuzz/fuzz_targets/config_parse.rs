#![no_main]

use fedmesh::orchestrator::SimulationConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = SimulationConfig::from_toml_str(text) {
        // whatever parses must validate and survive a round trip
        assert!(config.validate().is_ok());
        let again = SimulationConfig::from_toml_str(&config.to_toml_string()).expect("round trip");
        assert_eq!(again, config);
    }
});
