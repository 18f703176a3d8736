#![no_main]

use libfuzzer_sys::fuzz_target;
use poc_harness::trace::LogAdapter;

// input is `<adapter toml> NUL <log text>`
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(config) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let log = String::from_utf8_lossy(data.get(split + 1..).unwrap_or_default());
    if let Ok(adapter) = LogAdapter::from_toml(config) {
        let _ = adapter.transform(&log);
        let _ = adapter.parse(&log);
    }
});
