//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simfuzz::features::{TemporalTensor, ROAD_FEATURE_COUNT};
use simfuzz::feedback::{SceneRecord, SIGNALS};
use simfuzz::ga::Removal;
use simfuzz::geometry::Vec2;
use simfuzz::oracles::{Violation, ViolationKind};
use simfuzz::sim::DT;
use simfuzz::vpm::{VpmConfig, VpmModel};

/// Rank of each point: 0 if undominated, else 1 + max rank of its dominators,
/// computed by repeated peeling.
pub fn brute_ranks(objs: &[Vec<f64>]) -> Vec<usize> {
    let n = objs.len();
    let mut rank = vec![usize::MAX; n];
    let mut r = 0;
    while rank.iter().any(|x| *x == usize::MAX) {
        let layer: Vec<usize> = (0..n)
            .filter(|i| rank[*i] == usize::MAX)
            .filter(|i| {
                !(0..n).any(|j| {
                    rank[j] == usize::MAX && j != *i && {
                        let (a, b) = (&objs[j], &objs[*i]);
                        a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
                    }
                })
            })
            .collect();
        for i in layer {
            rank[i] = r;
        }
        r += 1;
    }
    rank
}

pub fn random_population(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.gen_range(1..=20);
    let m = rng.gen_range(2..=4);
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(0..5) as f64).collect()).collect()
}

/// Literal reading of the removal rule: travelled distance below `w` means
/// stuck; otherwise any window of `u` steps whose summed distance change is
/// negative keeps the vehicle, and no such window means leaving.
pub fn brute_removals(pos: &[Vec<Vec2>], w: f64, u: usize) -> Vec<(usize, Removal)> {
    let ego = &pos[0];
    let mut out = Vec::new();
    for v in 1..pos.len() {
        let mut route = 0.0;
        for t in 1..pos[v].len() {
            route += ((pos[v][t].x - pos[v][t - 1].x).powi(2) + (pos[v][t].y - pos[v][t - 1].y).powi(2)).sqrt();
        }
        if route < w {
            out.push((v - 1, Removal::Stuck));
            continue;
        }
        let m = |t: usize| ((pos[v][t].x - ego[t].x).powi(2) + (pos[v][t].y - ego[t].y).powi(2)).sqrt();
        let big_t = pos[v].len();
        let mut flag = true;
        for t in u..big_t.saturating_sub(1) {
            let mut delta = 0.0;
            for i in t - u..=t {
                delta += m(i + 1) - m(i);
            }
            if delta < 0.0 {
                flag = false;
            }
        }
        if flag {
            out.push((v - 1, Removal::Leaving));
        }
    }
    out
}

pub fn scenes_from(pos: &[Vec<Vec2>]) -> Vec<SceneRecord> {
    (0..pos[0].len())
        .map(|t| SceneRecord {
            tick: t as u32,
            values: pos.iter().flat_map(|p| [p[t].x, p[t].y, 0.0, 0.0, 0.0, 0.0, 0.0]).collect(),
        })
        .collect()
}

pub fn synthetic_positions(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    let t = rng.gen_range(1..=2400);
    (0..4)
        .map(|_| {
            let kind = rng.gen_range(0..4);
            let mut p = Vec2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            let dir = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let speed = match kind {
                0 => 0.0,
                1 => rng.gen_range(0.0..0.01),
                _ => rng.gen_range(0.0..1.0),
            };
            (0..t)
                .map(|_| {
                    if kind == 3 {
                        p = p + Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * speed;
                    } else {
                        p = p + dir * speed;
                    }
                    p
                })
                .collect()
        })
        .collect()
}

pub fn tiny() -> VpmConfig {
    VpmConfig { n_info: 3, t_fixed: 4, d_model: 8, heads: 2, head_dim: 4, layers: 1, ff_mult: 4 }
}

pub fn input(cfg: &VpmConfig, rng: &mut ChaCha8Rng, valid: usize) -> TemporalTensor {
    let values = (0..cfg.t_fixed * cfg.n_info)
        .map(|i| if i / cfg.n_info < valid { rng.gen_range(-1.5..1.5) } else { 0.0 })
        .collect();
    TemporalTensor {
        t_fixed: cfg.t_fixed,
        n_info: cfg.n_info,
        values,
        mask: (0..cfg.t_fixed).map(|t| t < valid).collect(),
        m: 1,
    }
}

/// Largest relative error between analytic and central-difference gradients.
pub fn max_grad_error(cfg: VpmConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VpmModel::<f64>::new(cfg, seed).unwrap();
    // Perturb norms and biases away from their trivial initial values.
    for p in model.params.iter_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let xs: Vec<TemporalTensor> = (0..3).map(|k| input(&cfg, &mut rng, cfg.t_fixed - k % 2)).collect();
    let batch: Vec<(&TemporalTensor, f64)> = xs.iter().enumerate().map(|(i, x)| (x, (i % 2) as f64)).collect();
    let (_, grad) = model.loss_and_gradients(&batch).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let orig = model.params[i];
        model.params[i] = orig + h;
        let lp = model.loss(&batch).unwrap();
        model.params[i] = orig - h;
        let lm = model.loss(&batch).unwrap();
        model.params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Positives have the speed channel above 0.5, negatives below -0.5.
pub fn synthetic(cfg: &VpmConfig, n: usize, seed: u64) -> Vec<(TemporalTensor, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let y = (i % 2) as f64;
            let valid = rng.gen_range(cfg.t_fixed / 2..=cfg.t_fixed);
            let mut x = input(cfg, &mut rng, valid);
            for t in 0..valid {
                let s = rng.gen_range(0.5..1.5);
                x.values[t * cfg.n_info + 2] = if y == 1.0 { s } else { -s };
            }
            (x, y)
        })
        .collect()
}

pub fn violation(kind: ViolationKind, t: f64, x: f64, y: f64) -> Violation {
    Violation {
        kind,
        tick: (t / DT).round() as usize,
        sim_time: t,
        location: Vec2::new(x, y),
        counterpart: None,
        detail: String::new(),
        possibly_congested: false,
    }
}

/// Reference clusterer: element i opens a cluster iff no earlier opener lies
/// within both thresholds and shares its kind.
pub fn reference_count(vs: &[Violation], window: f64, radius: f64) -> usize {
    let mut opener = vec![false; vs.len()];
    for i in 0..vs.len() {
        opener[i] = !(0..i).any(|j| {
            opener[j]
                && vs[j].kind == vs[i].kind
                && (vs[j].sim_time - vs[i].sim_time).abs() <= window
                && ((vs[j].location.x - vs[i].location.x).powi(2) + (vs[j].location.y - vs[i].location.y).powi(2)).sqrt() <= radius
        });
    }
    opener.iter().filter(|o| **o).count()
}

pub fn random_set(rng: &mut ChaCha8Rng) -> Vec<Violation> {
    let n = rng.gen_range(0..40);
    (0..n)
        .map(|_| {
            let kind = ViolationKind::ALL[rng.gen_range(0..2)];
            violation(kind, rng.gen_range(0.0..60.0), rng.gen_range(0.0..120.0), rng.gen_range(0.0..40.0))
        })
        .collect()
}

pub fn random_scenes(rng: &mut ChaCha8Rng) -> Vec<SceneRecord> {
    let m = rng.gen_range(1..=4);
    let t = rng.gen_range(1..30);
    (0..t)
        .map(|i| SceneRecord { tick: i, values: (0..m * SIGNALS).map(|_| rng.gen_range(-200.0..200.0)).collect() })
        .collect()
}

pub fn euclid(s: &SceneRecord, a: usize, b: usize) -> f64 {
    let (pa, pb) = (&s.values[a * SIGNALS..], &s.values[b * SIGNALS..]);
    ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
}

pub fn one_feature_toy() -> Vec<([f64; ROAD_FEATURE_COUNT], f64)> {
    let mut rows = Vec::new();
    for _ in 0..50 {
        for (x, y) in [(-1.0, 0.0), (1.0, 1.0)] {
            let mut r = [0.0; ROAD_FEATURE_COUNT];
            r[0] = x;
            rows.push((r, y));
        }
    }
    rows
}

pub fn random_rows(seed: u64, n: usize) -> Vec<([f64; ROAD_FEATURE_COUNT], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: [f64; ROAD_FEATURE_COUNT] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    (0..n)
        .map(|_| {
            let x: [f64; ROAD_FEATURE_COUNT] = std::array::from_fn(|j| rng.gen_range(-5.0..5.0) * (j + 1) as f64);
            let s: f64 = w.iter().zip(&x).map(|(a, b)| a * b / 10.0).sum::<f64>() + rng.gen_range(-2.0..2.0);
            (x, if s > 0.0 { 1.0 } else { 0.0 })
        })
        .collect()
}
