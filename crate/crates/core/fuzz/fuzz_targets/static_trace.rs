#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::trace::{format_static_traces, parse_static_traces_str};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(traces) = parse_static_traces_str(text) {
        // canonical output must parse back to the same traces
        let again = parse_static_traces_str(&format_static_traces(&traces)).expect("canonical form parses");
        assert_eq!(again.len(), traces.len());
    }
});
