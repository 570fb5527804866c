mod common;
use common::{random_set, reference_count, violation};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simfuzz::agents::{Agent, Control, Observation};
use simfuzz::feedback::Termination;
use simfuzz::harness::{generate_seeds, scenario_seed, simulate};
use simfuzz::map::bundled;
use simfuzz::oracles::{dedup, detect, OracleConfig, ViolationKind};
use simfuzz::scenario::fixtures;
use simfuzz::sim::{run, SimConfig};
use simfuzz::ga::GaConfig;
use std::collections::BTreeMap;

#[test]
fn dedup_matches_reference_on_random_sets() {
    let cfg = OracleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut merged_any = false;
    for _ in 0..500 {
        let set = random_set(&mut rng);
        let out = dedup(&set, &cfg);
        assert_eq!(out.len(), reference_count(&set, 10.0, 30.0));
        assert_eq!(dedup(&out, &cfg), out);
        assert!(out.len() <= set.len());
        merged_any |= out.len() < set.len();
    }
    assert!(merged_any);
}

#[test]
fn worked_dedup_cases() {
    let cfg = OracleConfig::default();
    let a = violation(ViolationKind::Collision, 20.0, 0.0, 0.0);
    assert_eq!(dedup(&[a.clone(), violation(ViolationKind::Collision, 25.0, 10.0, 0.0)], &cfg).len(), 1);
    assert_eq!(dedup(&[a.clone(), violation(ViolationKind::Collision, 35.0, 0.0, 0.0)], &cfg).len(), 2);
    // Chained members are compared with the first member, not the latest.
    let chain = [a, violation(ViolationKind::Collision, 28.0, 0.0, 0.0), violation(ViolationKind::Collision, 36.0, 0.0, 0.0)];
    assert_eq!(dedup(&chain, &cfg).len(), 2);
}

proptest! {
    #[test]
    fn size_preserved_iff_no_pair_matches(seed in 0u64..10_000) {
        let cfg = OracleConfig::default();
        let set = random_set(&mut ChaCha8Rng::seed_from_u64(seed));
        let any_pair = (0..set.len()).any(|i| (0..i).any(|j| simfuzz::oracles::same_cluster(&set[j], &set[i], &cfg)));
        prop_assert_eq!(dedup(&set, &cfg).len() == set.len(), !any_pair);
    }
}

struct Scripted<F: FnMut(u32) -> Control + Send>(F);

impl<F: FnMut(u32) -> Control + Send> Agent for Scripted<F> {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn decide(&mut self, obs: &Observation) -> Result<Control, String> {
        Ok((self.0)(obs.tick))
    }
}

#[test]
fn parked_ego_is_stuck_once() {
    let map = bundled::straight();
    let scenario = fixtures::empty_road(&map);
    let trace = run(&map, &scenario, &mut Scripted(|_| Control::full_brake()), 1, 95.0, &SimConfig::default()).unwrap();
    assert_eq!(trace.termination, Termination::Timeout);
    let found = detect(&trace, &map, &OracleConfig::default());
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].kind, ViolationKind::Stuck);
    assert_eq!(found[0].tick, 0);
    let short = run(&map, &scenario, &mut Scripted(|_| Control::full_brake()), 1, 89.0, &SimConfig::default()).unwrap();
    assert!(detect(&short, &map, &OracleConfig::default()).is_empty());
}

fn swerve(steer: f64) -> impl FnMut(u32) -> Control + Send {
    move |t| {
        let s = match t {
            60..=79 => steer,
            80..=99 => -steer,
            _ => 0.0,
        };
        Control { throttle: if t < 60 { 0.5 } else { 0.0 }, brake: if t < 100 { 0.0 } else { 0.3 }, steer: s }
    }
}

#[test]
fn only_solid_boundaries_count_as_invasion() {
    let map = bundled::straight();
    let scenario = fixtures::empty_road(&map);
    let cfg = SimConfig::default();
    let left = run(&map, &scenario, &mut Scripted(swerve(0.4)), 1, 10.0, &cfg).unwrap();
    let y = left.scenes.last().unwrap().position(0).y;
    assert!(y > 1.75, "ego ended at y = {y}");
    assert!(detect(&left, &map, &OracleConfig::default()).iter().all(|v| v.kind != ViolationKind::LaneInvasion));
    let right = run(&map, &scenario, &mut Scripted(swerve(-0.4)), 1, 10.0, &cfg).unwrap();
    assert!(right.scenes.last().unwrap().position(0).y < -1.75);
    assert!(detect(&right, &map, &OracleConfig::default()).iter().any(|v| v.kind == ViolationKind::LaneInvasion));
}

#[test]
fn collisions_coincide_with_collision_termination() {
    let map = bundled::town();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seeds = generate_seeds(&map, 60, &GaConfig::default(), 1200, &mut rng).unwrap();
    let mut collided = 0;
    for s in &seeds {
        let trace = simulate(&map, s, "blindspot", &BTreeMap::new(), scenario_seed(8, s.id), 120.0, &SimConfig::default(), &OracleConfig::default()).unwrap();
        let has = trace.violations.iter().any(|v| v.kind == ViolationKind::Collision);
        let ended = matches!(trace.termination, Termination::Collision { .. });
        assert_eq!(has, ended, "scenario {}", s.id);
        collided += ended as usize;
    }
    assert!(collided > 0);
}
