#![no_main]
use libfuzzer_sys::fuzz_target;
use simfuzz::harness::CampaignConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = CampaignConfig::from_toml(text) {
            let _ = cfg.validate();
        }
    }
});
