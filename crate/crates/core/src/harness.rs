//! Campaign orchestration: seed generation, training corpora, the fuzzing
//! loop with checkpoints, recordings and replay, coverage and reports.

use crate::agents::make_agent;
use crate::error::{Error, Result};
use crate::features::{road_features, temporal_tensor, NormStats, RoadFeatures, TemporalTensor, TensorConfig};
use crate::feedback::{distance_matrix, Trace};
use crate::ga::{
    crossover, evaluate_fitness, mutate, select, FitnessModels, GaConfig, ParetoFitness,
};
use crate::map::LaneMap;
use crate::oracles::{detect, same_cluster, OracleConfig, Violation};
use crate::scenario::{RouteSampler, Scenario, WeatherParams};
use crate::sdc::LrModel;
use crate::sim::{run, SimConfig, TICK_HZ};
use crate::vpm::VpmPredictor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const RECORDING_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const RECORDING_DIR: &str = "recordings";
/// Radius within which an NPC counts as near the ego (m).
pub const NEAR_EGO_M: f64 = 50.0;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from_json(what, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value).expect("value serializes");
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Simulation seed of scenario `id`, derived from the master seed.
pub fn scenario_seed(master: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id.wrapping_add(1 << 32));
    rng.gen()
}

/// Random generator driving the variation of generation `g`.
pub fn generation_rng(master: u64, g: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(g as u64);
    rng
}

/// Trained models used by the fitness function, stored as one JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelBundle {
    pub vpm: Option<VpmPredictor>,
    pub sdc: Option<LrModel>,
}

impl ModelBundle {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "model bundle")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn merge(self, other: ModelBundle) -> ModelBundle {
        ModelBundle { vpm: other.vpm.or(self.vpm), sdc: other.sdc.or(self.sdc) }
    }

    pub fn fitness_models(&self) -> FitnessModels {
        FitnessModels { vpm: self.vpm.clone(), sdc: self.sdc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub map: PathBuf,
    pub agent: String,
    pub agent_params: BTreeMap<String, f64>,
    pub ga: GaConfig,
    pub oracle: OracleConfig,
    pub sim: SimConfig,
    /// Generation budget; generation 1 is the seed population.
    pub generations: usize,
    /// Optional wall-clock budget (s) checked between generations.
    pub wall_clock_s: Option<f64>,
    /// Worker threads for simulation; 0 uses the global pool.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub max_duration_s: f64,
    pub models: Vec<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            map: PathBuf::new(),
            agent: "blindspot".into(),
            agent_params: BTreeMap::new(),
            ga: GaConfig::default(),
            oracle: OracleConfig::default(),
            sim: SimConfig::default(),
            generations: 10,
            wall_clock_s: None,
            workers: 0,
            out_dir: None,
            seed: 0,
            max_duration_s: 120.0,
            models: Vec::new(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("campaign config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if !cfg.map.as_os_str().is_empty() && cfg.map.is_relative() {
            cfg.map = base.join(&cfg.map);
        }
        for m in cfg.models.iter_mut().filter(|m| m.is_relative()) {
            *m = base.join(&*m);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ga.validate()?;
        if !self.oracle.is_valid() {
            return Err(Error::Config("oracle thresholds must be positive".into()));
        }
        if self.generations == 0 && self.wall_clock_s.is_none() {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.wall_clock_s.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("wall-clock budget must be positive".into()));
        }
        if !(self.max_duration_s > 0.0) {
            return Err(Error::Config("max_duration_s must be positive".into()));
        }
        make_agent(&self.agent, &self.agent_params).map(|_| ())
    }

    pub fn load_models(&self) -> Result<ModelBundle> {
        self.models.iter().try_fold(ModelBundle::default(), |acc, p| Ok(acc.merge(ModelBundle::load(p)?)))
    }

    pub fn max_depart_tick(&self) -> u32 {
        (self.max_duration_s * TICK_HZ as f64 * 0.5) as u32
    }
}

/// One random scenario with the configured actor counts.
pub fn random_scenario<R: Rng + ?Sized>(
    sampler: &RouteSampler,
    id: u64,
    npcs: usize,
    pedestrians: usize,
    max_depart_tick: u32,
    rng: &mut R,
) -> Option<Scenario> {
    for _ in 0..100 {
        let ego = sampler.vehicle_route(rng)?;
        let mut sc = Scenario { id, parents: Vec::new(), ego, npcs: Vec::new(), pedestrians: Vec::new(), weather: WeatherParams::sample(rng) };
        for _ in 0..npcs {
            for _ in 0..20 {
                let Some(r) = sampler.vehicle_route(rng) else { break };
                sc.npcs.push(r);
                if sc.validate(sampler.map).is_ok() {
                    break;
                }
                sc.npcs.pop();
            }
        }
        for _ in 0..pedestrians {
            for _ in 0..20 {
                let Some(r) = sampler.pedestrian_route(max_depart_tick, rng) else { break };
                sc.pedestrians.push(r);
                if sc.validate(sampler.map).is_ok() {
                    break;
                }
                sc.pedestrians.pop();
            }
        }
        if sc.npcs.len() == npcs && sc.pedestrians.len() == pedestrians {
            return Some(sc);
        }
    }
    None
}

/// `n` valid random scenarios with ids `0..n`.
pub fn generate_seeds<R: Rng + ?Sized>(map: &LaneMap, n: usize, cfg: &GaConfig, max_depart_tick: u32, rng: &mut R) -> Result<Vec<Scenario>> {
    let sampler = RouteSampler::new(map);
    (0..n as u64)
        .map(|id| {
            random_scenario(&sampler, id, cfg.npc_count, cfg.pedestrian_count, max_depart_tick, rng)
                .ok_or_else(|| Error::Generation(format!("map `{}` cannot place the configured actors", map.name)))
        })
        .collect()
}

/// Simulate one scenario and attach oracle results.
pub fn simulate(map: &LaneMap, scenario: &Scenario, agent: &str, params: &BTreeMap<String, f64>, seed: u64, max_duration_s: f64, sim: &SimConfig, oracle: &OracleConfig) -> Result<Trace> {
    let mut agent = make_agent(agent, params)?;
    let mut trace = run(map, scenario, agent.as_mut(), seed, max_duration_s, sim)?;
    trace.violations = detect(&trace, map, oracle);
    Ok(trace)
}

/// One labeled training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub scenario: Scenario,
    pub seed: u64,
    pub label: f64,
    pub tensor: TemporalTensor,
    pub road: RoadFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCorpus {
    pub agent: String,
    pub max_duration_s: f64,
    pub tensor: TensorConfig,
    pub norms: NormStats,
    pub samples: Vec<CorpusSample>,
}

impl TrainingCorpus {
    pub fn positive_rate(&self) -> f64 {
        self.samples.iter().filter(|s| s.label == 1.0).count() as f64 / self.samples.len().max(1) as f64
    }

    pub fn tensors(&self) -> Vec<(TemporalTensor, f64)> {
        self.samples.iter().map(|s| (s.tensor.clone(), s.label)).collect()
    }

    pub fn road_rows(&self) -> Vec<(RoadFeatures, f64)> {
        self.samples.iter().map(|s| (s.road, s.label)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "training corpus")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Run `n` random scenarios and label each by whether any violation occurred.
pub fn generate_training_corpus(
    map: &LaneMap,
    agent: &str,
    n: usize,
    max_duration_s: f64,
    tensor: TensorConfig,
    seed: u64,
) -> Result<TrainingCorpus> {
    let cfg = GaConfig { npc_count: tensor.max_vehicles - 1, ..GaConfig::default() };
    let max_depart = (max_duration_s * TICK_HZ as f64 * 0.5) as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios = generate_seeds(map, n, &cfg, max_depart, &mut rng)?;
    let params = BTreeMap::new();
    let traces: Vec<Trace> = scenarios
        .par_iter()
        .map(|s| simulate(map, s, agent, &params, scenario_seed(seed, s.id), max_duration_s, &SimConfig::default(), &OracleConfig::default()))
        .collect::<Result<_>>()?;
    let norms = NormStats::from_traces(&traces);
    let samples = traces
        .into_iter()
        .map(|t| {
            Ok(CorpusSample {
                label: if t.violations.is_empty() { 0.0 } else { 1.0 },
                tensor: temporal_tensor(&t, &tensor, &norms)?,
                road: road_features(&t.scenario.ego.points)?,
                seed: t.seed,
                scenario: t.scenario,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = TrainingCorpus { agent: agent.into(), max_duration_s, tensor, norms, samples };
    let rate = corpus.positive_rate();
    if rate == 0.0 || rate == 1.0 {
        log::warn!("training corpus has a single class (positive rate {rate})");
    }
    Ok(corpus)
}

/// Self-describing replay container: a full recording carries the trace, a
/// scenario-only recording just what is needed to re-execute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub schema_version: u32,
    pub map_hash: String,
    pub agent: String,
    #[serde(default)]
    pub agent_params: BTreeMap<String, f64>,
    pub seed: u64,
    pub max_duration_s: f64,
    pub sim: SimConfig,
    pub oracle: OracleConfig,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

impl Recording {
    pub fn is_full(&self) -> bool {
        self.trace.is_some()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::from_json("recording", e))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == RECORDING_VERSION as u64 => {}
            Some(v) => return Err(Error::Incompatible(format!("recording schema {v}, expected {RECORDING_VERSION}"))),
            None => return Err(Error::Validation("recording: missing schema_version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::from_json("recording", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Simulate `scenario` and package the result as a full recording.
pub fn record(
    map: &LaneMap,
    scenario: &Scenario,
    agent: &str,
    agent_params: &BTreeMap<String, f64>,
    seed: u64,
    max_duration_s: f64,
    sim: &SimConfig,
    oracle: &OracleConfig,
) -> Result<Recording> {
    let trace = simulate(map, scenario, agent, agent_params, seed, max_duration_s, sim, oracle)?;
    Ok(Recording {
        schema_version: RECORDING_VERSION,
        map_hash: map.hash(),
        agent: agent.into(),
        agent_params: agent_params.clone(),
        seed,
        max_duration_s,
        sim: *sim,
        oracle: *oracle,
        scenario: scenario.clone(),
        trace: Some(trace),
    })
}

/// Re-execute a recording on `map`. With `verify`, a full recording must be
/// reproduced exactly.
pub fn replay(rec: &Recording, map: &LaneMap, verify: bool) -> Result<Trace> {
    if rec.map_hash != map.hash() {
        return Err(Error::Incompatible("recording was made on a different map".into()));
    }
    let trace = simulate(map, &rec.scenario, &rec.agent, &rec.agent_params, rec.seed, rec.max_duration_s, &rec.sim, &rec.oracle)?;
    if verify {
        if let Some(stored) = &rec.trace {
            verify_trace(stored, &trace)?;
        }
    }
    Ok(trace)
}

/// Stored trace of a full recording, without re-simulation.
pub fn playback(rec: &Recording) -> Result<&Trace> {
    rec.trace.as_ref().ok_or_else(|| Error::Argument("scenario-only recording has no stored states".into()))
}

/// First tick at which two traces differ, if any.
pub fn first_divergence(a: &Trace, b: &Trace) -> Option<usize> {
    let n = a.len().min(b.len());
    for t in 0..n {
        let same = a.scenes[t] == b.scenes[t]
            && a.controls[t] == b.controls[t]
            && a.pedestrians[t] == b.pedestrians[t]
            && a.lights[t] == b.lights[t];
        if !same {
            return Some(t);
        }
    }
    (a.len() != b.len() || a.termination != b.termination || a.violations != b.violations).then_some(n.saturating_sub(1))
}

pub fn verify_trace(stored: &Trace, replayed: &Trace) -> Result<()> {
    match first_divergence(stored, replayed) {
        None => Ok(()),
        Some(tick) => Err(Error::Integrity { tick, detail: "replayed trace diverges from the recording".into() }),
    }
}

/// Waypoints visited by ego trajectories, looked up through a uniform grid.
#[derive(Debug, Clone)]
pub struct CoverageGrid {
    radius: f64,
    points: Vec<crate::geometry::Vec2>,
    cells: HashMap<(i64, i64), Vec<usize>>,
    pub covered: Vec<bool>,
}

impl CoverageGrid {
    pub fn new(map: &LaneMap) -> Self {
        let radius = map.waypoint_spacing * 0.5;
        let points: Vec<_> = map.waypoints.iter().map(|w| w.pos).collect();
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(((p.x / radius).floor() as i64, (p.y / radius).floor() as i64)).or_default().push(i);
        }
        let covered = vec![false; points.len()];
        CoverageGrid { radius, points, cells, covered }
    }

    pub fn add(&mut self, positions: impl IntoIterator<Item = crate::geometry::Vec2>) {
        for p in positions {
            let (cx, cy) = ((p.x / self.radius).floor() as i64, (p.y / self.radius).floor() as i64);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                        for &i in ids {
                            if self.points[i].dist(p) <= self.radius {
                                self.covered[i] = true;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn percent(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        100.0 * self.covered.iter().filter(|c| **c).count() as f64 / self.points.len() as f64
    }
}

/// Percentage of map waypoints within half a waypoint spacing of any ego position.
pub fn trajectory_coverage<'a>(traces: impl IntoIterator<Item = &'a Trace>, map: &LaneMap) -> f64 {
    let mut grid = CoverageGrid::new(map);
    for t in traces {
        grid.add(t.ego_positions());
    }
    grid.percent()
}

/// Number of NPCs that come within `radius` of the ego at some tick.
pub fn npcs_near_ego(trace: &Trace, radius: f64) -> usize {
    let d = distance_matrix(trace);
    (1..d.vehicles).filter(|v| (0..d.ticks).any(|t| d.get(t, 0, *v) <= radius)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: u64,
    pub generation: usize,
    pub parents: Vec<u64>,
    pub seed: u64,
    pub fitness: ParetoFitness,
    pub violations: usize,
    pub termination: String,
    pub npcs_near_ego: usize,
    pub recording: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueViolation {
    pub scenario: u64,
    pub generation: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub variant: String,
    pub agent: String,
    pub seed: u64,
    pub generations: usize,
    /// New unique violations found in each generation.
    pub uv_per_generation: Vec<usize>,
    pub cumulative_uv: Vec<usize>,
    pub violations_by_kind: BTreeMap<String, usize>,
    pub coverage_percent: f64,
    pub coverage_per_generation: Vec<f64>,
    /// Mean number of NPCs within 50 m of the ego per evaluated scenario, by generation.
    pub npcs_near_ego_per_generation: Vec<f64>,
    pub unique_violations: Vec<UniqueViolation>,
    pub records: Vec<ScenarioRecord>,
}

impl CampaignReport {
    fn new(cfg: &CampaignConfig) -> Self {
        CampaignReport {
            variant: cfg.ga.variant.to_string(),
            agent: cfg.agent.clone(),
            seed: cfg.seed,
            generations: 0,
            uv_per_generation: Vec::new(),
            cumulative_uv: Vec::new(),
            violations_by_kind: BTreeMap::new(),
            coverage_percent: 0.0,
            coverage_per_generation: Vec::new(),
            npcs_near_ego_per_generation: Vec::new(),
            unique_violations: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn total_uv(&self) -> usize {
        self.unique_violations.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "campaign report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Member {
    scenario: Scenario,
    seed: u64,
    fitness: ParetoFitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    map_hash: String,
    next_id: u64,
    population: Vec<Member>,
    covered: Vec<bool>,
    report: CampaignReport,
}

struct Evaluated {
    scenario: Scenario,
    seed: u64,
    trace: Trace,
    fitness: ParetoFitness,
}

/// A running campaign over a loaded map.
pub struct Campaign<'a> {
    map: &'a LaneMap,
    cfg: CampaignConfig,
    models: FitnessModels,
    pool: Option<rayon::ThreadPool>,
    population: Vec<Member>,
    traces: Vec<Trace>,
    next_id: u64,
    coverage: CoverageGrid,
    report: CampaignReport,
}

impl<'a> Campaign<'a> {
    /// Start a campaign, resuming from the checkpoint in `out_dir` if present.
    pub fn new(map: &'a LaneMap, cfg: CampaignConfig, models: FitnessModels) -> Result<Self> {
        cfg.validate()?;
        let pool = match cfg.workers {
            0 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            ),
        };
        let mut c = Campaign {
            map,
            models,
            pool,
            population: Vec::new(),
            traces: Vec::new(),
            next_id: 0,
            coverage: CoverageGrid::new(map),
            report: CampaignReport::new(&cfg),
            cfg,
        };
        if let Some(path) = c.checkpoint_path().filter(|p| p.exists()) {
            c.resume(&path)?;
        }
        Ok(c)
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.cfg.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE))
    }

    fn resume(&mut self, path: &Path) -> Result<()> {
        let cp: Checkpoint = read_json(path, "checkpoint")?;
        if cp.version != RECORDING_VERSION || cp.map_hash != self.map.hash() || cp.covered.len() != self.coverage.covered.len() {
            return Err(Error::Incompatible("checkpoint does not belong to this campaign".into()));
        }
        let scenarios: Vec<(Scenario, u64)> = cp.population.iter().map(|m| (m.scenario.clone(), m.seed)).collect();
        self.traces = self.simulate_all(&scenarios)?.into_iter().map(|(_, t)| t).collect();
        self.population = cp.population;
        self.next_id = cp.next_id;
        self.coverage.covered = cp.covered;
        self.report = cp.report;
        log::info!("resumed after generation {}", self.report.generations);
        Ok(())
    }

    pub fn report(&self) -> &CampaignReport {
        &self.report
    }

    pub fn generations_done(&self) -> usize {
        self.report.generations
    }

    fn simulate_all(&self, batch: &[(Scenario, u64)]) -> Result<Vec<(u64, Trace)>> {
        let cfg = &self.cfg;
        let work = || {
            batch
                .par_iter()
                .map(|(s, seed)| {
                    simulate(self.map, s, &cfg.agent, &cfg.agent_params, *seed, cfg.max_duration_s, &cfg.sim, &cfg.oracle).map(|t| (s.id, t))
                })
                .collect::<Result<Vec<_>>>()
        };
        match &self.pool {
            Some(p) => p.install(work),
            None => work(),
        }
    }

    fn evaluate(&self, batch: Vec<Scenario>) -> Result<Vec<Evaluated>> {
        let seeded: Vec<(Scenario, u64)> = batch.into_iter().map(|s| {
            let seed = scenario_seed(self.cfg.seed, s.id);
            (s, seed)
        }).collect();
        let traces = self.simulate_all(&seeded)?;
        seeded
            .into_iter()
            .zip(traces)
            .map(|((scenario, seed), (_, trace))| {
                let fitness = evaluate_fitness(&trace, &self.models, &self.cfg.oracle)?;
                Ok(Evaluated { scenario, seed, trace, fitness })
            })
            .collect()
    }

    fn record(&mut self, generation: usize, evals: &[Evaluated]) -> Result<()> {
        let before = self.report.unique_violations.len();
        let mut near = 0usize;
        for e in evals {
            self.coverage.add(e.trace.ego_positions());
            for v in &e.trace.violations {
                let known = self.report.unique_violations.iter().any(|u| same_cluster(&u.violation, v, &self.cfg.oracle));
                if !known {
                    *self.report.violations_by_kind.entry(v.kind.to_string()).or_default() += 1;
                    self.report.unique_violations.push(UniqueViolation { scenario: e.scenario.id, generation, violation: v.clone() });
                }
            }
            let near_ego = npcs_near_ego(&e.trace, NEAR_EGO_M);
            near += near_ego;
            let recording = match &self.cfg.out_dir {
                Some(dir) => {
                    let name = format!("{RECORDING_DIR}/{:06}.json", e.scenario.id);
                    let rec = Recording {
                        schema_version: RECORDING_VERSION,
                        map_hash: self.map.hash(),
                        agent: self.cfg.agent.clone(),
                        agent_params: self.cfg.agent_params.clone(),
                        seed: e.seed,
                        max_duration_s: self.cfg.max_duration_s,
                        sim: self.cfg.sim,
                        oracle: self.cfg.oracle,
                        scenario: e.scenario.clone(),
                        trace: (!e.trace.violations.is_empty()).then(|| e.trace.clone()),
                    };
                    rec.save(&dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            self.report.records.push(ScenarioRecord {
                id: e.scenario.id,
                generation,
                parents: e.scenario.parents.clone(),
                seed: e.seed,
                fitness: e.fitness,
                violations: e.trace.violations.len(),
                termination: e.trace.termination.label().into(),
                npcs_near_ego: near_ego,
                recording,
            });
        }
        let found = self.report.unique_violations.len() - before;
        self.report.uv_per_generation.push(found);
        self.report.cumulative_uv.push(self.report.unique_violations.len());
        self.report.coverage_percent = self.coverage.percent();
        self.report.coverage_per_generation.push(self.report.coverage_percent);
        self.report.npcs_near_ego_per_generation.push(near as f64 / evals.len().max(1) as f64);
        self.report.generations = generation + 1;
        Ok(())
    }

    fn checkpoint(&self) -> Result<()> {
        let Some(dir) = &self.cfg.out_dir else { return Ok(()) };
        let cp = Checkpoint {
            version: RECORDING_VERSION,
            map_hash: self.map.hash(),
            next_id: self.next_id,
            population: self.population.clone(),
            covered: self.coverage.covered.clone(),
            report: self.report.clone(),
        };
        write_json(&dir.join(CHECKPOINT_FILE), &cp)?;
        write_json(&dir.join(REPORT_FILE), &self.report)
    }

    fn seed_generation(&mut self) -> Result<()> {
        let mut rng = generation_rng(self.cfg.seed, 0);
        let seeds = generate_seeds(self.map, self.cfg.ga.population, &self.cfg.ga, self.cfg.max_depart_tick(), &mut rng)?;
        self.next_id = seeds.len() as u64;
        let evals = self.evaluate(seeds)?;
        self.record(0, &evals)?;
        self.population = evals.iter().map(|e| Member { scenario: e.scenario.clone(), seed: e.seed, fitness: e.fitness }).collect();
        self.traces = evals.into_iter().map(|e| e.trace).collect();
        Ok(())
    }

    fn vary(&mut self, rng: &mut ChaCha8Rng) -> Vec<Scenario> {
        let ga = self.cfg.ga;
        let sampler = RouteSampler::new(self.map);
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.shuffle(rng);
        let mut kids: Vec<(Scenario, usize)> = order.iter().map(|&i| (self.population[i].scenario.clone(), i)).collect();
        for pair in kids.chunks_mut(2) {
            if pair.len() == 2 && rng.gen_bool(ga.crossover_prob) {
                let (a, b) = crossover(&pair[0].0, &pair[1].0, self.map, &ga, rng);
                pair[0].0 = a;
                pair[1].0 = b;
            }
        }
        let mut out = Vec::with_capacity(kids.len());
        for (mut s, src) in kids {
            if rng.gen_bool(ga.mutation_prob) {
                let parents = if s.parents.is_empty() { vec![s.id] } else { s.parents.clone() };
                s = mutate(&s, &self.traces[src], &sampler, &ga, ga.variant.mutation, self.cfg.max_depart_tick(), rng);
                s.parents = parents;
            } else if s.parents.is_empty() {
                s.parents = vec![s.id];
            }
            s.id = self.next_id;
            self.next_id += 1;
            out.push(s);
        }
        out
    }

    /// Run one more generation. Returns false once the budget is spent.
    pub fn step(&mut self) -> Result<bool> {
        let g = self.report.generations;
        if self.cfg.generations > 0 && g >= self.cfg.generations {
            return Ok(false);
        }
        if g == 0 {
            self.seed_generation()?;
        } else {
            let mut rng = generation_rng(self.cfg.seed, g);
            let offspring = self.vary(&mut rng);
            let evals = self.evaluate(offspring)?;
            self.record(g, &evals)?;
            let mut members = std::mem::take(&mut self.population);
            let mut traces = std::mem::take(&mut self.traces);
            for e in evals {
                members.push(Member { scenario: e.scenario, seed: e.seed, fitness: e.fitness });
                traces.push(e.trace);
            }
            let ids: Vec<u64> = members.iter().map(|m| m.scenario.id).collect();
            let fitness: Vec<ParetoFitness> = members.iter().map(|m| m.fitness).collect();
            let mut keep = select(&ids, &fitness, self.cfg.ga.population, self.cfg.ga.variant.selection, &mut rng)?;
            keep.sort_by_key(|i| ids[*i]);
            self.population = keep.iter().map(|i| members[*i].clone()).collect();
            let mut traces: Vec<Option<Trace>> = traces.into_iter().map(Some).collect();
            self.traces = keep.iter().map(|i| traces[*i].take().expect("selected once")).collect();
        }
        self.checkpoint()?;
        log::info!(
            "generation {g}: {} new UVs, {} total, coverage {:.2}%",
            self.report.uv_per_generation[g],
            self.report.total_uv(),
            self.report.coverage_percent
        );
        Ok(true)
    }

    /// Run until the generation or wall-clock budget is exhausted.
    pub fn run(mut self) -> Result<CampaignReport> {
        let start = Instant::now();
        while self.step()? {
            if self.cfg.wall_clock_s.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
                break;
            }
        }
        Ok(self.report)
    }
}

/// Load the map and models named by `cfg` and run the campaign.
pub fn fuzz(cfg: &CampaignConfig) -> Result<CampaignReport> {
    let map = LaneMap::from_path(&cfg.map)?;
    let models = cfg.load_models()?.fitness_models();
    Campaign::new(&map, cfg.clone(), models)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Argument(format!("unknown report format `{s}`"))),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    variant: &'a str,
    agent: &'a str,
    seed: u64,
    generations: usize,
    total_uv: usize,
    coverage_percent: f64,
    mean_npcs_near_ego: f64,
    violations_by_kind: &'a BTreeMap<String, usize>,
    cumulative_uv: &'a [usize],
    coverage_per_generation: &'a [f64],
    npcs_near_ego_per_generation: &'a [f64],
}

/// Write the report into `dir`: `summary.json` for JSON; `generations.csv`,
/// `scenarios.csv` and `violations.csv` for CSV. Returns the files written.
pub fn write_report(report: &CampaignReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Json => {
            let near = report.records.iter().map(|r| r.npcs_near_ego).sum::<usize>() as f64 / report.records.len().max(1) as f64;
            let summary = Summary {
                variant: &report.variant,
                agent: &report.agent,
                seed: report.seed,
                generations: report.generations,
                total_uv: report.total_uv(),
                coverage_percent: report.coverage_percent,
                mean_npcs_near_ego: near,
                violations_by_kind: &report.violations_by_kind,
                cumulative_uv: &report.cumulative_uv,
                coverage_per_generation: &report.coverage_per_generation,
                npcs_near_ego_per_generation: &report.npcs_near_ego_per_generation,
            };
            let path = dir.join("summary.json");
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let gens = dir.join("generations.csv");
            write_csv(
                &gens,
                &["generation", "new_uv", "cumulative_uv", "coverage_percent", "mean_npcs_near_ego"],
                (0..report.generations).map(|g| {
                    vec![
                        g.to_string(),
                        report.uv_per_generation[g].to_string(),
                        report.cumulative_uv[g].to_string(),
                        report.coverage_per_generation[g].to_string(),
                        report.npcs_near_ego_per_generation[g].to_string(),
                    ]
                }),
            )?;
            let scen = dir.join("scenarios.csv");
            write_csv(
                &scen,
                &["id", "generation", "seed", "vpm_prob", "sdc_prob", "min_dist", "uv_count", "violations", "termination", "npcs_near_ego", "recording"],
                report.records.iter().map(|r| {
                    vec![
                        r.id.to_string(),
                        r.generation.to_string(),
                        r.seed.to_string(),
                        r.fitness.vpm_prob.to_string(),
                        r.fitness.sdc_prob.to_string(),
                        r.fitness.min_dist.to_string(),
                        r.fitness.uv_count.to_string(),
                        r.violations.to_string(),
                        r.termination.clone(),
                        r.npcs_near_ego.to_string(),
                        r.recording.clone().unwrap_or_default(),
                    ]
                }),
            )?;
            let viol = dir.join("violations.csv");
            write_csv(
                &viol,
                &["scenario", "generation", "kind", "tick", "sim_time", "x", "y", "detail"],
                report.unique_violations.iter().map(|u| {
                    let v = &u.violation;
                    vec![
                        u.scenario.to_string(),
                        u.generation.to_string(),
                        v.kind.to_string(),
                        v.tick.to_string(),
                        v.sim_time.to_string(),
                        v.location.x.to_string(),
                        v.location.y.to_string(),
                        v.detail.clone(),
                    ]
                }),
            )?;
            Ok(vec![gens, scen, viol])
        }
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
