//! Every checked-in fuzz seed is a valid input for its parser.

use simfuzz::agents::parse_control_line;
use simfuzz::harness::{CampaignConfig, Recording};
use simfuzz::map::LaneMap;
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn map_seeds_parse() {
    for (p, text) in seeds("map_json") {
        LaneMap::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn recording_seeds_parse() {
    for (p, text) in seeds("recording_json") {
        Recording::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn campaign_seeds_parse_and_validate() {
    for (p, text) in seeds("campaign_toml") {
        let cfg = CampaignConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn control_seeds_parse() {
    for (p, text) in seeds("control_line") {
        parse_control_line(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn truncated_seeds_are_rejected_without_panic() {
    for target in ["map_json", "recording_json", "campaign_toml", "control_line"] {
        for (_, text) in seeds(target) {
            for cut in [0, text.len() / 3, text.len() / 2] {
                let part = &text[..cut];
                let _ = LaneMap::from_json(part);
                let _ = Recording::from_json(part);
                let _ = CampaignConfig::from_toml(part);
                let _ = parse_control_line(part);
            }
        }
    }
}
