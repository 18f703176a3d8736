#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::trace::{parse_dynamic_log, parse_dynamic_log_strict};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let lenient = parse_dynamic_log(&text);
    if let Ok(strict) = parse_dynamic_log_strict(&text) {
        assert_eq!(strict, lenient);
    }
});
