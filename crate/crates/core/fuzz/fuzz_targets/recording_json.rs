#![no_main]
use libfuzzer_sys::fuzz_target;
use simfuzz::harness::Recording;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Recording::from_json(text);
    }
});
