mod common;
use common::{brute_ranks, brute_removals, random_population, scenes_from, synthetic_positions};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simfuzz::ga::{
    crowding_distance, crossover, dominates, mutate_pedestrians, mutate_weather, non_dominated_sort, nsga2_select,
    removal_set, trajectories_intersect, GaConfig, Removal,
};
use simfuzz::geometry::Vec2;
use simfuzz::harness::{generate_seeds, simulate};
use simfuzz::map::bundled;
use simfuzz::oracles::OracleConfig;
use simfuzz::scenario::RouteSampler;
use simfuzz::sim::SimConfig;
use std::collections::BTreeMap;

#[test]
fn fronts_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let objs = random_population(&mut rng);
        let ranks = brute_ranks(&objs);
        for (r, front) in non_dominated_sort(&objs).iter().enumerate() {
            for i in front {
                assert_eq!(ranks[*i], r);
            }
        }
    }
}

#[test]
fn worked_example_fronts() {
    let objs = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![2.0, 1.0]];
    assert_eq!(non_dominated_sort(&objs), vec![vec![1], vec![2], vec![0]]);
    assert!(dominates(&objs[1], &objs[2]) && dominates(&objs[2], &objs[0]));
}

#[test]
fn selection_prefers_better_fronts() {
    let objs = vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0], vec![2.0, 2.0], vec![1.0, 1.0]];
    let ids: Vec<u64> = (0..5).collect();
    let mut got = nsga2_select(&ids, &objs, 3).unwrap();
    got.sort();
    assert_eq!(got, vec![1, 2, 3]);
}

proptest! {
    #[test]
    fn boundary_points_are_infinite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objs: Vec<Vec<f64>> = (0..rng.gen_range(2..12)).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        for front in non_dominated_sort(&objs) {
            let cd = crowding_distance(&objs, &front);
            for k in 0..3 {
                let lo = front.iter().enumerate().min_by(|a, b| objs[*a.1][k].total_cmp(&objs[*b.1][k]).then(a.0.cmp(&b.0))).unwrap().0;
                let hi = front.iter().enumerate().max_by(|a, b| objs[*a.1][k].total_cmp(&objs[*b.1][k]).then(b.0.cmp(&a.0))).unwrap().0;
                prop_assert!(cd[lo].is_infinite());
                prop_assert!(cd[hi].is_infinite());
            }
        }
    }

    #[test]
    fn scaling_an_objective_keeps_selection(seed in any::<u64>(), exp in -7i32..7, k_obj in 0usize..3) {
        // Power-of-two scales are exact, so crowding-distance ties survive scaling.
        let scale = 2f64.powi(exp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..20);
        let objs: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(0..6) as f64).collect()).collect();
        let scaled: Vec<Vec<f64>> = objs.iter().map(|o| {
            let mut o = o.clone();
            o[k_obj] *= scale;
            o
        }).collect();
        let ids: Vec<u64> = (0..n as u64).collect();
        let k = rng.gen_range(1..=n);
        prop_assert_eq!(non_dominated_sort(&objs), non_dominated_sort(&scaled));
        let mut a = nsga2_select(&ids, &objs, k).unwrap();
        let mut b = nsga2_select(&ids, &scaled, k).unwrap();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn removal_set_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut stuck, mut leaving, mut kept) = (0, 0, 0);
    for _ in 0..200 {
        let pos = synthetic_positions(&mut rng);
        let scenes = scenes_from(&pos);
        let expected = brute_removals(&pos, 10.0, 200);
        assert_eq!(removal_set(&scenes, 10.0, 200), expected);
        stuck += expected.iter().filter(|r| r.1 == Removal::Stuck).count();
        leaving += expected.iter().filter(|r| r.1 == Removal::Leaving).count();
        kept += 3 - expected.len();
    }
    assert!(stuck > 0 && leaving > 0 && kept > 0);
}

#[test]
fn stationary_npc_is_stuck() {
    let pos = vec![
        (0..400).map(|t| Vec2::new(t as f64 * 0.5, 0.0)).collect::<Vec<_>>(),
        vec![Vec2::new(50.0, 3.0); 400],
    ];
    assert_eq!(removal_set(&scenes_from(&pos), 10.0, 200), vec![(0, Removal::Stuck)]);
}

#[test]
fn receding_npc_is_leaving() {
    let pos = vec![vec![Vec2::ZERO; 400], (0..400).map(|t| Vec2::new(5.0 + t as f64 * 0.5, 0.0)).collect()];
    assert_eq!(removal_set(&scenes_from(&pos), 10.0, 200), vec![(0, Removal::Leaving)]);
}

#[test]
fn approaching_npc_is_kept() {
    let pos = vec![vec![Vec2::ZERO; 400], (0..400).map(|t| Vec2::new(300.0 - t as f64 * 0.5, 0.0)).collect()];
    assert!(removal_set(&scenes_from(&pos), 10.0, 200).is_empty());
}

#[test]
fn crossover_keeps_ego_weather_and_counts() {
    let map = bundled::town();
    let cfg = GaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seeds = generate_seeds(&map, 10, &cfg, 1200, &mut rng).unwrap();
    for pair in seeds.chunks(2) {
        let (a, b) = crossover(&pair[0], &pair[1], &map, &cfg, &mut rng);
        assert_eq!(a.ego, pair[0].ego);
        assert_eq!(b.ego, pair[1].ego);
        assert_eq!(a.weather, pair[0].weather);
        assert_eq!(b.weather, pair[1].weather);
        assert_eq!(a.npcs.len() + b.npcs.len(), pair[0].npcs.len() + pair[1].npcs.len());
        assert_eq!(a.pedestrians.len(), pair[0].pedestrians.len());
        assert!(a.validate(&map).is_ok() && b.validate(&map).is_ok());
    }
}

#[test]
fn crossover_of_identical_parents_is_identity() {
    let map = bundled::town();
    let cfg = GaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = generate_seeds(&map, 1, &cfg, 1200, &mut rng).unwrap().remove(0);
    let (a, b) = crossover(&s, &s, &map, &cfg, &mut rng);
    assert_eq!((a.ego, a.npcs, a.pedestrians), (s.ego.clone(), s.npcs.clone(), s.pedestrians.clone()));
    assert_eq!((b.npcs, b.pedestrians), (s.npcs, s.pedestrians));
}

#[test]
fn crossing_npc_moves_to_second_offspring() {
    let map = bundled::town();
    let cfg = GaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut found = 0;
    let seeds = generate_seeds(&map, 40, &cfg, 1200, &mut rng).unwrap();
    for pair in seeds.chunks(2) {
        let (s1, s2) = (&pair[0], &pair[1]);
        let crossing: Vec<_> = s1.npcs.iter().filter(|n| trajectories_intersect(&n.points, &s2.ego.points, 2.0)).collect();
        if crossing.len() != 1 {
            continue;
        }
        found += 1;
        let (_, b) = crossover(s1, s2, &map, &cfg, &mut rng);
        let swapped = b.npcs.iter().any(|n| n == crossing[0]);
        let rolled_back = b.npcs == s2.npcs;
        assert!(swapped || rolled_back);
    }
    assert!(found > 0);
}

#[test]
fn pedestrians_spawn_near_ego_path() {
    let map = bundled::town();
    let cfg = GaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sampler = RouteSampler::new(&map);
    for s in generate_seeds(&map, 5, &cfg, 1200, &mut rng).unwrap() {
        let trace = simulate(&map, &s, "cautious", &BTreeMap::new(), 1, 30.0, &SimConfig::default(), &OracleConfig::default()).unwrap();
        let m = mutate_pedestrians(&s, &trace, &sampler, &cfg, &mut rng);
        assert_eq!(m.pedestrians.len(), s.pedestrians.len());
        let ego: Vec<Vec2> = trace.ego_positions().collect();
        for (new, old) in m.pedestrians.iter().zip(&s.pedestrians) {
            if new != old {
                assert!(ego.iter().any(|p| p.dist(new.start()) <= 20.0));
            }
        }
        assert!(m.validate(&map).is_ok());
    }
}

#[test]
fn weather_samples_stay_in_range() {
    let map = bundled::town();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = generate_seeds(&map, 1, &GaConfig::default(), 1200, &mut rng).unwrap().remove(0);
    let mut sum = 0.0;
    for _ in 0..1000 {
        let w = mutate_weather(&s, &mut rng).weather;
        assert!(w.is_valid());
        sum += w.sun_altitude_deg;
    }
    assert!((sum / 1000.0).abs() <= 10.0);
}
