#![no_main]

use averaged_lorentz::config::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ScenarioConfig::from_toml(text) {
        if cfg.validate().is_ok() {
            let again = ScenarioConfig::from_toml(&cfg.to_toml()).expect("serialized config parses");
            assert_eq!(cfg, again);
        }
    }
});
