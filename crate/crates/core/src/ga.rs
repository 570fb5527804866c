//! Evolutionary operators: four-objective fitness, NSGA-II selection,
//! route-swapping crossover and the mutation operators.

use crate::agents::Control;
use crate::error::{Error, Result};
use crate::feedback::{distance_matrix, min_distance, SceneRecord, Trace};
use crate::features::road_features;
use crate::geometry::{segment_segment_dist, Vec2};
use crate::oracles::{dedup, OracleConfig};
use crate::scenario::{Route, RouteSampler, Scenario, WeatherParams};
use crate::sdc::LrModel;
use crate::sim::{DT, TICK_HZ};
use crate::vpm::VpmPredictor;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionVariant {
    VS,
    V,
    S,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationVariant {
    D,
    R,
}

/// Selection and mutation strategy pair, written `VS+D`, `R+R`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub selection: SelectionVariant,
    pub mutation: MutationVariant,
}

impl Variant {
    pub const VS_D: Variant = Variant { selection: SelectionVariant::VS, mutation: MutationVariant::D };
    pub const R_R: Variant = Variant { selection: SelectionVariant::R, mutation: MutationVariant::R };
    pub const VS_R: Variant = Variant { selection: SelectionVariant::VS, mutation: MutationVariant::R };
}

impl Default for Variant {
    fn default() -> Self {
        Variant::VS_D
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}+{:?}", self.selection, self.mutation)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (sel, mutation) = s
            .split_once('+')
            .ok_or_else(|| Error::Argument(format!("variant `{s}` must look like VS+D")))?;
        let selection = match sel {
            "VS" => SelectionVariant::VS,
            "V" => SelectionVariant::V,
            "S" => SelectionVariant::S,
            "R" => SelectionVariant::R,
            _ => return Err(Error::Argument(format!("unknown selection variant `{sel}`"))),
        };
        let mutation = match mutation {
            "D" => MutationVariant::D,
            "R" => MutationVariant::R,
            _ => return Err(Error::Argument(format!("unknown mutation variant `{mutation}`"))),
        };
        Ok(Variant { selection, mutation })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Total travel below which an NPC counts as stuck (m).
    pub stuck_threshold_m: f64,
    /// Sliding window for the leaving test (s).
    pub window_s: f64,
    pub pedestrian_spawn_radius_m: f64,
    /// Maximum shift of route start/end along their lanes (m).
    pub route_shift_m: f64,
    /// Lateral buffer within which two trajectories count as intersecting (m).
    pub intersect_buffer_m: f64,
    pub npc_count: usize,
    pub pedestrian_count: usize,
    pub variant: Variant,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 20,
            crossover_prob: 0.5,
            mutation_prob: 0.5,
            stuck_threshold_m: 10.0,
            window_s: 10.0,
            pedestrian_spawn_radius_m: 20.0,
            route_shift_m: 20.0,
            intersect_buffer_m: 2.0,
            npc_count: 2,
            pedestrian_count: 10,
            variant: Variant::VS_D,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.crossover_prob, self.mutation_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("crossover and mutation probabilities must lie in [0, 1]".into()));
        }
        if !(self.stuck_threshold_m > 0.0 && self.window_s > 0.0 && self.pedestrian_spawn_radius_m > 0.0) {
            return Err(Error::Config("w, u and the pedestrian spawn radius must be positive".into()));
        }
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        Ok(())
    }

    pub fn window_ticks(&self) -> usize {
        (self.window_s * TICK_HZ as f64).round() as usize
    }
}

/// Objective values of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoFitness {
    pub vpm_prob: f64,
    pub sdc_prob: f64,
    /// Closest ego/NPC approach (m); infinite without NPCs.
    #[serde(with = "inf_as_null")]
    pub min_dist: f64,
    pub uv_count: usize,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ParetoFitness {
    /// Objectives in maximization form, restricted to the variant's active set.
    pub fn objectives(&self, selection: SelectionVariant) -> Vec<f64> {
        let all = [self.vpm_prob, self.sdc_prob, -self.min_dist, self.uv_count as f64];
        let active: &[usize] = match selection {
            SelectionVariant::VS | SelectionVariant::R => &[0, 1, 2, 3],
            SelectionVariant::V => &[0, 2, 3],
            SelectionVariant::S => &[1, 2, 3],
        };
        active.iter().map(|i| all[*i]).collect()
    }
}

/// Trained models used by the fitness function. Missing models score 0.5.
#[derive(Debug, Clone, Default)]
pub struct FitnessModels {
    pub vpm: Option<VpmPredictor>,
    pub sdc: Option<LrModel>,
}

pub fn evaluate_fitness(trace: &Trace, models: &FitnessModels, oracle: &OracleConfig) -> Result<ParetoFitness> {
    let vpm_prob = match &models.vpm {
        Some(p) => p.score(trace)?,
        None => 0.5,
    };
    let sdc_prob = match &models.sdc {
        Some(lr) => lr.predict_unsafe(&road_features(&trace.scenario.ego.points)?),
        None => 0.5,
    };
    let min_dist = min_distance(&distance_matrix(trace), 0);
    let uv_count = dedup(&trace.violations, oracle).len();
    Ok(ParetoFitness { vpm_prob, sdc_prob, min_dist, uv_count })
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Fast non-dominated sort. Returns fronts of indices, best first.
pub fn non_dominated_sort(objs: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objs.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&objs[i], &objs[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates(&objs[j], &objs[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|i| dominated_by_count[*i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front`, in `front` order. Boundary
/// points of every objective are infinite; objectives with zero or
/// non-finite range add nothing to interior points.
pub fn crowding_distance(objs: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    let m = objs[front[0]].len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|a, b| objs[front[*a]][k].total_cmp(&objs[front[*b]][k]).then(a.cmp(b)));
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let lo = objs[front[order[0]]][k];
        let hi = objs[front[order[n - 1]]][k];
        let range = hi - lo;
        if !(range.is_finite() && range > 0.0) {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let gap = objs[front[order[w + 1]]][k] - objs[front[order[w - 1]]][k];
            if gap.is_finite() {
                dist[order[w]] += gap / range;
            }
        }
    }
    dist
}

/// NSGA-II survivor selection of `k` indices. Fronts are taken whole while
/// they fit; the last front is cut by descending crowding distance, then by
/// ascending id.
pub fn nsga2_select(ids: &[u64], objs: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Argument("selection size must be positive".into()));
    }
    if k > objs.len() || ids.len() != objs.len() {
        return Err(Error::Argument(format!("cannot select {k} of {} individuals", objs.len())));
    }
    let mut chosen = Vec::with_capacity(k);
    for front in non_dominated_sort(objs) {
        if chosen.len() + front.len() <= k {
            chosen.extend(front);
            if chosen.len() == k {
                break;
            }
            continue;
        }
        let cd = crowding_distance(objs, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|a, b| cd[*b].total_cmp(&cd[*a]).then(ids[front[*a]].cmp(&ids[front[*b]])));
        chosen.extend(order.into_iter().take(k - chosen.len()).map(|i| front[i]));
        break;
    }
    Ok(chosen)
}

/// Pick `k` survivors according to the selection variant.
pub fn select<R: Rng + ?Sized>(
    ids: &[u64],
    fitness: &[ParetoFitness],
    k: usize,
    selection: SelectionVariant,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if selection == SelectionVariant::R {
        if k == 0 || k > ids.len() {
            return Err(Error::Argument(format!("cannot select {k} of {} individuals", ids.len())));
        }
        let mut picked = index::sample(rng, ids.len(), k).into_vec();
        picked.sort_unstable();
        return Ok(picked);
    }
    let objs: Vec<Vec<f64>> = fitness.iter().map(|f| f.objectives(selection)).collect();
    nsga2_select(ids, &objs, k)
}

/// Whether two polylines come within `buffer` of each other.
pub fn trajectories_intersect(a: &[Vec2], b: &[Vec2], buffer: f64) -> bool {
    let bbox = |p: &[Vec2]| {
        p.iter().fold((Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)), |(lo, hi), q| {
            (Vec2::new(lo.x.min(q.x), lo.y.min(q.y)), Vec2::new(hi.x.max(q.x), hi.y.max(q.y)))
        })
    };
    let (alo, ahi) = bbox(a);
    let (blo, bhi) = bbox(b);
    if alo.x > bhi.x + buffer || blo.x > ahi.x + buffer || alo.y > bhi.y + buffer || blo.y > ahi.y + buffer {
        return false;
    }
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            if segment_segment_dist(sa[0], sa[1], sb[0], sb[1]) <= buffer {
                return true;
            }
        }
    }
    false
}

/// Swap half the pedestrians and one NPC pair between two parents. Egos and
/// weather never move. Swaps that break spawn spacing are rolled back.
pub fn crossover<R: Rng + ?Sized>(
    s1: &Scenario,
    s2: &Scenario,
    map: &crate::map::LaneMap,
    cfg: &GaConfig,
    rng: &mut R,
) -> (Scenario, Scenario) {
    let mut a = s1.clone();
    let mut b = s2.clone();

    let np = a.pedestrians.len().min(b.pedestrians.len());
    if np > 0 {
        let (a0, b0) = (a.clone(), b.clone());
        for i in index::sample(rng, np, np / 2) {
            std::mem::swap(&mut a.pedestrians[i], &mut b.pedestrians[i]);
        }
        if a.validate(map).is_err() || b.validate(map).is_err() {
            a = a0;
            b = b0;
        }
    }

    if !a.npcs.is_empty() && !b.npcs.is_empty() {
        let crossing: Vec<usize> = (0..a.npcs.len())
            .filter(|i| trajectories_intersect(&a.npcs[*i].points, &b.ego.points, cfg.intersect_buffer_m))
            .collect();
        let i = match crossing.choose(rng) {
            Some(i) => *i,
            None => rng.gen_range(0..a.npcs.len()),
        };
        let j = rng.gen_range(0..b.npcs.len());
        std::mem::swap(&mut a.npcs[i], &mut b.npcs[j]);
        if a.validate(map).is_err() || b.validate(map).is_err() {
            std::mem::swap(&mut a.npcs[i], &mut b.npcs[j]);
        }
    }
    a.parents = vec![s1.id, s2.id];
    b.parents = vec![s2.id, s1.id];
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Removal {
    Stuck,
    Leaving,
}

/// Classify NPC vehicles (vehicle slots `1..`) for removal. Returns
/// `(npc index, reason)` for every vehicle to drop.
pub fn removal_set(scenes: &[SceneRecord], w: f64, u_ticks: usize) -> Vec<(usize, Removal)> {
    let Some(first) = scenes.first() else { return Vec::new() };
    let mut out = Vec::new();
    for v in 1..first.vehicle_count() {
        let route: f64 = scenes.windows(2).map(|p| p[1].position(v).dist(p[0].position(v))).sum();
        if route < w {
            out.push((v - 1, Removal::Stuck));
            continue;
        }
        let m: Vec<f64> = scenes.iter().map(|s| s.position(v).dist(s.position(0))).collect();
        // The window sum telescopes to m[t + 1] - m[t - u].
        let approaching = (u_ticks..m.len().saturating_sub(1)).any(|t| m[t + 1] - m[t - u_ticks] < 0.0);
        if !approaching {
            out.push((v - 1, Removal::Leaving));
        }
    }
    out
}

fn replan<R: Rng + ?Sized>(sampler: &RouteSampler, route: &Route, cfg: &GaConfig, rng: &mut R) -> Route {
    sampler.perturb_route(route, cfg.route_shift_m, rng).unwrap_or_else(|| route.clone())
}

/// Distance-guided vehicle mutation: drop stuck and leaving NPCs, perturb the
/// remaining routes and the ego route, then refill with random NPCs.
pub fn distance_guided_mutation<R: Rng + ?Sized>(
    scenario: &Scenario,
    trace: &Trace,
    sampler: &RouteSampler,
    cfg: &GaConfig,
    rng: &mut R,
) -> Scenario {
    let removed = removal_set(&trace.scenes, cfg.stuck_threshold_m, cfg.window_ticks());
    let keep: Vec<Route> = scenario
        .npcs
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.iter().any(|(r, _)| r == i))
        .map(|(_, r)| r.clone())
        .collect();
    for _ in 0..10 {
        let mut cand = scenario.clone();
        cand.npcs = keep.iter().map(|r| replan(sampler, r, cfg, rng)).collect();
        cand.ego = replan(sampler, &scenario.ego, cfg, rng);
        for _ in 0..removed.len() {
            if let Some(r) = sampler.vehicle_route(rng) {
                cand.npcs.push(r);
            }
        }
        if cand.npcs.len() == scenario.npcs.len() && cand.validate(sampler.map).is_ok() {
            return cand;
        }
    }
    scenario.clone()
}

/// Re-spawn every pedestrian as a crossing of the road near the ego's
/// recorded path, timed to reach the path when the ego passes.
pub fn mutate_pedestrians<R: Rng + ?Sized>(
    scenario: &Scenario,
    trace: &Trace,
    sampler: &RouteSampler,
    cfg: &GaConfig,
    rng: &mut R,
) -> Scenario {
    let mut out = scenario.clone();
    if out.pedestrians.is_empty() || trace.is_empty() {
        return out;
    }
    let ego: Vec<Vec2> = trace.ego_positions().collect();
    let walk = crate::sim::SimConfig::default().pedestrian_speed;
    for k in 0..out.pedestrians.len() {
        for _ in 0..20 {
            let t = rng.gen_range(0..ego.len());
            let anchor = ego[t];
            let Some((a, b)) = sampler.crossing_at(anchor, rng) else { continue };
            let near = ego.iter().any(|p| p.dist(a) <= cfg.pedestrian_spawn_radius_m);
            if !near {
                continue;
            }
            let lead = a.dist(anchor) / walk;
            let jitter = rng.gen_range(-2.0..2.0);
            let depart = ((t as f64 * DT - lead + jitter) / DT).max(0.0).round() as u32;
            let prev = std::mem::replace(&mut out.pedestrians[k], Route::pedestrian(vec![a, b], depart));
            if out.validate(sampler.map).is_ok() {
                break;
            }
            out.pedestrians[k] = prev;
        }
    }
    out
}

pub fn mutate_weather<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Scenario {
    Scenario { weather: WeatherParams::sample(rng), ..scenario.clone() }
}

/// Mutation operator of `variant`: distance-guided vehicles, pedestrians near
/// the ego path and new weather for D; [`random_mutation`] for R.
pub fn mutate<R: Rng + ?Sized>(
    scenario: &Scenario,
    trace: &Trace,
    sampler: &RouteSampler,
    cfg: &GaConfig,
    variant: MutationVariant,
    max_depart_tick: u32,
    rng: &mut R,
) -> Scenario {
    match variant {
        MutationVariant::D => {
            let m = distance_guided_mutation(scenario, trace, sampler, cfg, rng);
            let m = mutate_pedestrians(&m, trace, sampler, cfg, rng);
            mutate_weather(&m, rng)
        }
        MutationVariant::R => random_mutation(scenario, sampler, max_depart_tick, rng),
    }
}

/// Baseline mutation: resample one vehicle route anywhere, all pedestrians
/// anywhere, and the weather.
pub fn random_mutation<R: Rng + ?Sized>(
    scenario: &Scenario,
    sampler: &RouteSampler,
    max_depart_tick: u32,
    rng: &mut R,
) -> Scenario {
    for _ in 0..20 {
        let mut cand = mutate_weather(scenario, rng);
        let slot = rng.gen_range(0..=cand.npcs.len());
        if let Some(r) = sampler.vehicle_route(rng) {
            if slot == 0 {
                cand.ego = r;
            } else {
                cand.npcs[slot - 1] = r;
            }
        }
        for p in cand.pedestrians.iter_mut() {
            if let Some(r) = sampler.pedestrian_route(max_depart_tick, rng) {
                *p = r;
            }
        }
        if cand.validate(sampler.map).is_ok() {
            return cand;
        }
    }
    scenario.clone()
}

/// Thresholds for the hard-driving event counts of the baseline fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveFuzzConfig {
    pub hard_accel: f64,
    pub hard_brake: f64,
    pub hard_brake_s: f64,
    pub hard_steer_rate: f64,
    pub min_md: f64,
}

impl Default for DriveFuzzConfig {
    fn default() -> Self {
        DriveFuzzConfig { hard_accel: 4.0, hard_brake: 0.8, hard_brake_s: 0.25, hard_steer_rate: 2.0, min_md: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HardEvents {
    pub accel: usize,
    pub brake: usize,
    pub turn: usize,
}

fn rising_edges(flags: impl IntoIterator<Item = bool>) -> usize {
    let mut prev = false;
    let mut n = 0;
    for f in flags {
        if f && !prev {
            n += 1;
        }
        prev = f;
    }
    n
}

/// Count hard acceleration, hard brake and hard turn events of the ego.
pub fn hard_events(scenes: &[SceneRecord], controls: &[Control], cfg: &DriveFuzzConfig) -> HardEvents {
    let accel = rising_edges(scenes.iter().map(|s| s.acceleration(0).norm() > cfg.hard_accel && {
        let v = s.velocity(0);
        v.dot(s.acceleration(0)) > 0.0
    }));
    let min_run = (cfg.hard_brake_s / DT).round() as usize;
    let mut brake = 0;
    let mut run = 0;
    for c in controls {
        if c.brake > cfg.hard_brake {
            run += 1;
            if run == min_run.max(1) {
                brake += 1;
            }
        } else {
            run = 0;
        }
    }
    let turn = rising_edges(controls.windows(2).map(|w| ((w[1].steer - w[0].steer) / DT).abs() > cfg.hard_steer_rate));
    HardEvents { accel, brake, turn }
}

/// `-(ha + hb + ht + os + us - 1/md)`; over- and understeer are always zero
/// in the kinematic model.
pub fn drivefuzz_score(events: HardEvents, md: f64, cfg: &DriveFuzzConfig) -> f64 {
    let md = md.max(cfg.min_md);
    -((events.accel + events.brake + events.turn) as f64 - 1.0 / md)
}

pub fn drivefuzz_fitness(trace: &Trace, cfg: &DriveFuzzConfig) -> f64 {
    let events = hard_events(&trace.scenes, &trace.controls, cfg);
    drivefuzz_score(events, min_distance(&distance_matrix(trace), 0), cfg)
}
