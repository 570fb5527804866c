//! Per-tick feedback collected during a run and the derived inter-vehicle
//! distance matrix.

use crate::agents::Control;
use crate::geometry::Vec2;
use crate::map::LightColor;
use crate::oracles::Violation;
use crate::scenario::Scenario;
use crate::sim::SimState;
use serde::{Deserialize, Serialize};

/// Signals stored per vehicle: loc_x, loc_y, speed_x, speed_y, acc_x, acc_y, yaw.
pub const SIGNALS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub tick: u32,
    /// `SIGNALS` values per vehicle, ego first then NPCs in spawn order.
    pub values: Vec<f64>,
}

impl SceneRecord {
    pub fn vehicle_count(&self) -> usize {
        self.values.len() / SIGNALS
    }

    pub fn signals(&self, v: usize) -> &[f64] {
        &self.values[v * SIGNALS..(v + 1) * SIGNALS]
    }

    pub fn position(&self, v: usize) -> Vec2 {
        let s = self.signals(v);
        Vec2::new(s[0], s[1])
    }

    pub fn velocity(&self, v: usize) -> Vec2 {
        let s = self.signals(v);
        Vec2::new(s[2], s[3])
    }

    pub fn acceleration(&self, v: usize) -> Vec2 {
        let s = self.signals(v);
        Vec2::new(s[4], s[5])
    }

    pub fn yaw(&self, v: usize) -> f64 {
        self.signals(v)[6]
    }
}

/// Copy the feedback signals of every vehicle in `state`.
pub fn record_scene(state: &SimState) -> SceneRecord {
    let mut values = Vec::new();
    for a in state.actors.iter().filter(|a| a.kind != crate::sim::ActorKind::Pedestrian) {
        values.extend_from_slice(&[
            a.position.x,
            a.position.y,
            a.velocity.x,
            a.velocity.y,
            a.acceleration.x,
            a.acceleration.y,
            a.yaw,
        ]);
    }
    SceneRecord { tick: state.tick, values }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    /// `counterpart` is the simulator actor index.
    Collision { counterpart: usize },
    Arrived,
    Timeout,
    AgentFault { message: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Collision { .. } => "collision",
            Termination::Arrived => "arrived",
            Termination::Timeout => "timeout",
            Termination::AgentFault { .. } => "agent_fault",
        }
    }
}

fn light_char(c: LightColor) -> char {
    match c {
        LightColor::Green => 'G',
        LightColor::Yellow => 'Y',
        LightColor::Red => 'R',
    }
}

/// The recorded execution of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: Scenario,
    pub seed: u64,
    pub agent: String,
    pub max_duration_s: f64,
    pub scenes: Vec<SceneRecord>,
    /// Pedestrian positions per tick, in scenario order.
    pub pedestrians: Vec<Vec<Vec2>>,
    /// Control applied after each scene; the terminal scene carries an idle entry.
    pub controls: Vec<Control>,
    /// Light colors per tick, one letter (G/Y/R) per map light in map order.
    pub lights: Vec<String>,
    pub termination: Termination,
    #[serde(default)]
    pub violations: Vec<Violation>,
}

impl Trace {
    pub fn new(scenario: Scenario, seed: u64, agent: String, max_duration_s: f64) -> Self {
        Trace {
            scenario,
            seed,
            agent,
            max_duration_s,
            scenes: Vec::new(),
            pedestrians: Vec::new(),
            controls: Vec::new(),
            lights: Vec::new(),
            termination: Termination::Timeout,
            violations: Vec::new(),
        }
    }

    /// Append the scene, pedestrian and light entries for `state`.
    pub fn push(&mut self, state: &SimState, n_npc: usize) {
        self.scenes.push(record_scene(state));
        self.pedestrians.push(state.actors[1 + n_npc..].iter().map(|a| a.position).collect());
        self.lights.push(state.light_colors.iter().map(|c| light_char(*c)).collect());
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn vehicle_count(&self) -> usize {
        self.scenes.first().map_or(0, |s| s.vehicle_count())
    }

    pub fn light_color(&self, tick: usize, slot: usize) -> LightColor {
        match self.lights[tick].as_bytes()[slot] {
            b'G' => LightColor::Green,
            b'Y' => LightColor::Yellow,
            _ => LightColor::Red,
        }
    }

    pub fn ego_positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.scenes.iter().map(|s| s.position(0))
    }

    pub fn duration_s(&self) -> f64 {
        self.scenes.len().saturating_sub(1) as f64 * crate::sim::DT
    }
}

/// T × V × V Euclidean distances between vehicle centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    pub ticks: usize,
    pub vehicles: usize,
    pub values: Vec<f64>,
}

impl DistMatrix {
    pub fn get(&self, t: usize, a: usize, b: usize) -> f64 {
        self.values[(t * self.vehicles + a) * self.vehicles + b]
    }

    /// Distance series between two vehicles over the whole trace.
    pub fn series(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.ticks).map(|t| self.get(t, a, b)).collect()
    }
}

pub fn distance_matrix(trace: &Trace) -> DistMatrix {
    distance_matrix_of(&trace.scenes)
}

pub fn distance_matrix_of(scenes: &[SceneRecord]) -> DistMatrix {
    let v = scenes.first().map_or(0, |s| s.vehicle_count());
    let mut values = vec![0.0; scenes.len() * v * v];
    for (t, s) in scenes.iter().enumerate() {
        for a in 0..v {
            for b in a + 1..v {
                let d = s.position(a).dist(s.position(b));
                values[(t * v + a) * v + b] = d;
                values[(t * v + b) * v + a] = d;
            }
        }
    }
    DistMatrix { ticks: scenes.len(), vehicles: v, values }
}

/// Smallest distance between `ego` and any other vehicle over all ticks;
/// `f64::INFINITY` when the ego is alone.
pub fn min_distance(dist: &DistMatrix, ego: usize) -> f64 {
    let mut best = f64::INFINITY;
    for t in 0..dist.ticks {
        for v in (0..dist.vehicles).filter(|&v| v != ego) {
            best = best.min(dist.get(t, ego, v));
        }
    }
    best
}
