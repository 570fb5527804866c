#![no_main]
use libfuzzer_sys::fuzz_target;
use simfuzz::map::LaneMap;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(map) = LaneMap::from_json(text) {
            let _ = map.hash();
        }
    }
});
