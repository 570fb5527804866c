use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simfuzz::features::TensorConfig;
use simfuzz::ga::{GaConfig, Variant};
use simfuzz::harness::{
    generate_seeds, generate_training_corpus, trajectory_coverage, write_report, Campaign, CampaignConfig, CampaignReport, Recording,
    ReportFormat, CHECKPOINT_FILE,
};
use simfuzz::harness::replay;
use simfuzz::map::bundled;
use simfuzz::oracles::{dedup, OracleConfig};
use simfuzz::scenario::fixtures;
use simfuzz::sim::SimConfig;
use std::collections::BTreeMap;

fn small(seed: u64, generations: usize) -> CampaignConfig {
    CampaignConfig {
        agent: "blindspot".into(),
        generations,
        seed,
        max_duration_s: 60.0,
        ga: GaConfig { population: 6, ..GaConfig::default() },
        ..CampaignConfig::default()
    }
}

#[test]
fn seeds_are_valid_and_reproducible() {
    let map = bundled::town();
    let a = generate_seeds(&map, 20, &GaConfig::default(), 1200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = generate_seeds(&map, 20, &GaConfig::default(), 1200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.len(), 20);
    assert_eq!(a, b);
    for s in &a {
        assert!(s.validate(&map).is_ok());
        assert_eq!((s.npcs.len(), s.pedestrians.len()), (2, 10));
    }
}

#[test]
fn one_generation_budget_gives_population_records() {
    let map = bundled::town();
    let cfg = CampaignConfig { generations: 1, max_duration_s: 30.0, ..CampaignConfig::default() };
    let report = Campaign::new(&map, cfg, Default::default()).unwrap().run().unwrap();
    assert_eq!(report.records.len(), 20);
    assert_eq!(report.generations, 1);
}

#[test]
fn campaign_is_deterministic_across_worker_counts() {
    let map = bundled::town();
    let a = Campaign::new(&map, small(3, 3), Default::default()).unwrap().run().unwrap();
    let b = Campaign::new(&map, CampaignConfig { workers: 1, ..small(3, 3) }, Default::default()).unwrap().run().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 18);
    assert!(a.cumulative_uv.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let map = bundled::town();
    let full_dir = tempfile::tempdir().unwrap();
    let split_dir = tempfile::tempdir().unwrap();
    let cfg = |dir: &std::path::Path, g| CampaignConfig { out_dir: Some(dir.to_path_buf()), ..small(4, g) };
    let full = Campaign::new(&map, cfg(full_dir.path(), 4), Default::default()).unwrap().run().unwrap();
    Campaign::new(&map, cfg(split_dir.path(), 2), Default::default()).unwrap().run().unwrap();
    assert!(split_dir.path().join(CHECKPOINT_FILE).exists());
    let resumed = Campaign::new(&map, cfg(split_dir.path(), 4), Default::default()).unwrap();
    assert_eq!(resumed.generations_done(), 2);
    assert_eq!(resumed.run().unwrap(), full);
}

#[test]
fn report_totals_match_stored_recordings() {
    let map = bundled::town();
    let dir = tempfile::tempdir().unwrap();
    let cfg = CampaignConfig { out_dir: Some(dir.path().to_path_buf()), ..small(5, 3) };
    let report = Campaign::new(&map, cfg, Default::default()).unwrap().run().unwrap();
    let mut pooled = Vec::new();
    for r in &report.records {
        let rec = Recording::load(&dir.path().join(r.recording.as_ref().unwrap())).unwrap();
        let trace = replay(&rec, &map, true).unwrap();
        assert_eq!(trace.violations.len(), r.violations);
        assert_eq!(rec.is_full(), r.violations > 0);
        pooled.extend(trace.violations);
    }
    assert!(report.total_uv() > 0);
    assert_eq!(dedup(&pooled, &OracleConfig::default()).len(), report.total_uv());
    for u in &report.unique_violations {
        let r = report.records.iter().find(|r| r.id == u.scenario).unwrap();
        let rec = Recording::load(&dir.path().join(r.recording.as_ref().unwrap())).unwrap();
        let trace = replay(&rec, &map, true).unwrap();
        assert!(trace.violations.iter().any(|v| v.kind == u.violation.kind && v.tick == u.violation.tick));
    }
    let stored = CampaignReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(stored, report);
}

#[test]
fn reports_render_in_both_formats() {
    let map = bundled::town();
    let report = Campaign::new(&map, small(6, 2), Default::default()).unwrap().run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = write_report(&report, ReportFormat::Json, dir.path()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json[0]).unwrap()).unwrap();
    assert_eq!(summary["total_uv"], report.total_uv());
    assert!(summary["mean_npcs_near_ego"].is_number());
    let csv = write_report(&report, ReportFormat::Csv, dir.path()).unwrap();
    let gens = std::fs::read_to_string(&csv[0]).unwrap();
    assert_eq!(gens.lines().count(), 3);
    let scen = std::fs::read_to_string(&csv[1]).unwrap();
    assert_eq!(scen.lines().count(), 1 + report.records.len());
}

#[test]
fn variants_parse_in_config() {
    let cfg = CampaignConfig::from_toml("[ga]\nvariant = \"VS+R\"\npopulation = 8\n").unwrap();
    assert_eq!(cfg.ga.variant, Variant::VS_R);
    assert!(CampaignConfig::from_toml("[ga]\nvariant = \"Q+D\"\n").is_err());
}

#[test]
fn coverage_matches_brute_force() {
    let map = bundled::straight();
    assert_eq!(trajectory_coverage([], &map), 0.0);
    let trace = simfuzz::harness::simulate(
        &map,
        &fixtures::empty_road(&map),
        "cautious",
        &BTreeMap::new(),
        1,
        60.0,
        &SimConfig::default(),
        &OracleConfig::default(),
    )
    .unwrap();
    let r = map.waypoint_spacing / 2.0;
    let covered = map.waypoints.iter().filter(|w| trace.ego_positions().any(|p| p.dist(w.pos) <= r)).count();
    let expected = 100.0 * covered as f64 / map.waypoints.len() as f64;
    assert_eq!(trajectory_coverage([&trace], &map), expected);
    assert!(expected > 0.0 && expected < 100.0);
}

#[test]
fn corpus_labels_and_durations() {
    let map = bundled::town();
    let corpus = generate_training_corpus(&map, "blindspot", 40, 120.0, TensorConfig { t_fixed: 32, max_vehicles: 3 }, 2).unwrap();
    assert_eq!(corpus.samples.len(), 40);
    assert!(corpus.samples.iter().all(|s| s.label == 0.0 || s.label == 1.0));
    assert!(corpus.max_duration_s <= 120.0);
    assert!(corpus.positive_rate() > 0.0);
}
