#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::config::parse_run_config_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = parse_run_config_str(text) {
            config.validate().expect("parsed configs are valid");
        }
    }
});
