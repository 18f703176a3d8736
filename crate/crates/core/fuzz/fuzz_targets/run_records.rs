#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::report::{FailureAnnotation, PostHocRecord};
use poc_harness::validation::EpisodeResult;

// the JSON documents a run directory holds
fuzz_target!(|data: &[u8]| {
    if let Ok(episode) = serde_json::from_slice::<EpisodeResult>(data) {
        let _ = episode.check();
        let _ = episode.final_coverage();
    }
    let _ = serde_json::from_slice::<FailureAnnotation>(data);
    let _ = serde_json::from_slice::<PostHocRecord>(data);
});
