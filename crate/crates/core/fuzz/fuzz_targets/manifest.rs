#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use poc_harness::instance::parse_manifest_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // a base that does not exist keeps trace file lookups off the disk
        let _ = parse_manifest_str(text, Path::new("/nonexistent/fuzz-base"));
    }
});
