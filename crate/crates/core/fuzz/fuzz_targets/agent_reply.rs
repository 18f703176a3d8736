#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::agent::extract::{declared_entry, extract_source};
use poc_harness::agent::parse_ranking;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Some(source) = extract_source(&text) {
        assert!(!source.trim().is_empty());
        let _ = declared_entry(&source);
    }
    let known: Vec<String> = ["t1", "t2", "t3"].map(String::from).to_vec();
    if let Ok(order) = parse_ranking(&text, &known) {
        assert!(order.iter().all(|id| known.contains(id)));
    }
});
