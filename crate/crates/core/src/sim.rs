//! Deterministic fixed-step 2D traffic simulator.
//!
//! Vehicles use a kinematic bicycle model integrated with forward Euler at
//! 20 Hz. NPCs drive with a pure-pursuit follower that brakes for anything in a
//! short forward cone and for red lights; pedestrians walk their polylines at
//! constant speed with no avoidance.

use crate::agents::{Agent, Control, LightObservation, Observation, VisibleActor};
use crate::error::Result;
use crate::feedback::{SceneRecord, Termination, Trace};
use crate::geometry::{normalize_angle, point_at, polyline_length, Obb, Vec2};
use crate::map::{LaneMap, LightColor};
use crate::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TICK_HZ: u32 = 20;
pub const DT: f64 = 1.0 / TICK_HZ as f64;

/// Physics, follower and perception constants in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub max_steer_deg: f64,
    pub ego_speed_cap: f64,
    pub npc_speed_cap: f64,
    pub pedestrian_speed: f64,
    pub extents: Extents,
    pub arrival_radius: f64,
    pub npc_cone_range: f64,
    pub npc_cone_half_angle_deg: f64,
    pub npc_speed_factor_min: f64,
    pub observation_radius: f64,
    pub route_lookahead: usize,
    /// Brake effectiveness loss at full rain.
    pub rain_brake_loss: f64,
    /// Observation radius loss at full fog.
    pub fog_visibility_loss: f64,
    /// Pedestrian detection radius factor when the sun is below the horizon.
    pub night_pedestrian_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wheelbase: 2.8,
            max_accel: 4.0,
            max_brake: 8.0,
            max_steer_deg: 35.0,
            ego_speed_cap: 30.0,
            npc_speed_cap: 20.0,
            pedestrian_speed: 1.4,
            extents: Extents::default(),
            arrival_radius: 3.0,
            npc_cone_range: 10.0,
            npc_cone_half_angle_deg: 30.0,
            npc_speed_factor_min: 0.8,
            observation_radius: 50.0,
            route_lookahead: 10,
            rain_brake_loss: 0.3,
            fog_visibility_loss: 0.5,
            night_pedestrian_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Ego,
    Npc,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub yaw: f64,
    /// Forward speed (m/s), never negative.
    pub speed: f64,
    pub kind: ActorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub tick: u32,
    /// Index 0 is the ego, then NPCs in scenario order, then pedestrians.
    pub actors: Vec<ActorState>,
    pub light_colors: Vec<LightColor>,
    /// Per-actor index of the last passed route point (vehicles) or walked
    /// arc length in centimetres (pedestrians).
    pub progress: Vec<usize>,
    /// Per-NPC cruise factor drawn from the run seed.
    pub npc_speed_factor: Vec<f64>,
    pub rng_seed: u64,
}

impl SimState {
    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * DT
    }
}

/// Borrowed world for one run.
pub struct Simulator<'a> {
    pub map: &'a LaneMap,
    pub scenario: &'a Scenario,
    pub cfg: SimConfig,
    route_lengths: Vec<f64>,
}

/// Body dimensions used for contact tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Extents {
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub pedestrian_radius: f64,
}

impl Default for Extents {
    fn default() -> Self {
        Extents { vehicle_length: 4.5, vehicle_width: 2.0, pedestrian_radius: 0.4 }
    }
}

/// First actor (vehicles before pedestrians) whose body touches the ego rectangle.
pub fn ego_contact(
    ego_pos: Vec2,
    ego_yaw: f64,
    vehicles: impl IntoIterator<Item = (usize, Vec2, f64)>,
    pedestrians: impl IntoIterator<Item = (usize, Vec2)>,
    ext: &Extents,
) -> Option<usize> {
    let ego = Obb::new(ego_pos, ego_yaw, ext.vehicle_length, ext.vehicle_width);
    let reach = ext.vehicle_length.hypot(ext.vehicle_width) + ext.pedestrian_radius;
    for (id, p, yaw) in vehicles {
        if p.dist(ego_pos) > reach {
            continue;
        }
        if ego.overlaps(&Obb::new(p, yaw, ext.vehicle_length, ext.vehicle_width)) {
            return Some(id);
        }
    }
    for (id, p) in pedestrians {
        if p.dist(ego_pos) > reach {
            continue;
        }
        if ego.overlaps_disc(p, ext.pedestrian_radius) {
            return Some(id);
        }
    }
    None
}

fn integrate_bicycle(a: &ActorState, accel: f64, steer_angle: f64, cfg: &SimConfig, cap: f64) -> ActorState {
    let dir = Vec2::from_angle(a.yaw);
    let position = a.position + dir * (a.speed * DT);
    let yaw = normalize_angle(a.yaw + a.speed / cfg.wheelbase * steer_angle.tan() * DT);
    let speed = (a.speed + accel * DT).clamp(0.0, cap);
    let velocity = Vec2::from_angle(yaw) * speed;
    ActorState {
        position,
        velocity,
        acceleration: (velocity - a.velocity) * (1.0 / DT),
        yaw,
        speed,
        kind: a.kind,
    }
}

impl<'a> Simulator<'a> {
    pub fn new(map: &'a LaneMap, scenario: &'a Scenario, cfg: SimConfig) -> Self {
        let route_lengths = scenario.pedestrians.iter().map(|r| polyline_length(&r.points)).collect();
        Simulator { map, scenario, cfg, route_lengths }
    }

    fn route_of(&self, i: usize) -> &crate::scenario::Route {
        let n = self.scenario.npcs.len();
        if i == 0 {
            &self.scenario.ego
        } else if i <= n {
            &self.scenario.npcs[i - 1]
        } else {
            &self.scenario.pedestrians[i - 1 - n]
        }
    }

    fn lights_at(&self, tick: u32) -> Vec<LightColor> {
        let t = tick as f64 * DT;
        self.map.lights.iter().map(|l| l.color_at(t)).collect()
    }

    fn brake_factor(&self) -> f64 {
        1.0 - self.cfg.rain_brake_loss * self.scenario.weather.rain_intensity / 100.0
    }

    /// Place every actor at its route start, at rest.
    pub fn spawn(&self, seed: u64) -> Result<SimState> {
        self.scenario.validate(self.map)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_npc = self.scenario.npcs.len();
        let npc_speed_factor =
            (0..n_npc).map(|_| rng.gen_range(self.cfg.npc_speed_factor_min..=1.0)).collect();
        let mut actors = Vec::new();
        let kinds = std::iter::once(ActorKind::Ego)
            .chain(std::iter::repeat(ActorKind::Npc).take(n_npc))
            .chain(std::iter::repeat(ActorKind::Pedestrian).take(self.scenario.pedestrians.len()));
        for (i, kind) in kinds.enumerate() {
            let r = self.route_of(i);
            actors.push(ActorState {
                position: r.start(),
                velocity: Vec2::ZERO,
                acceleration: Vec2::ZERO,
                yaw: normalize_angle(r.start_heading()),
                speed: 0.0,
                kind,
            });
        }
        Ok(SimState {
            tick: 0,
            progress: vec![0; actors.len()],
            actors,
            light_colors: self.lights_at(0),
            npc_speed_factor,
            rng_seed: seed,
        })
    }

    fn advance_progress(&self, route: &[Vec2], from: usize, p: Vec2) -> usize {
        let mut best = from;
        let mut best_d = p.dist(route[from]);
        let last = (from + 12).min(route.len() - 1);
        for (k, q) in route.iter().enumerate().take(last + 1).skip(from + 1) {
            let d = p.dist(*q);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    fn npc_command(&self, state: &SimState, i: usize) -> (f64, f64) {
        let cfg = &self.cfg;
        let a = &state.actors[i];
        let route = &self.route_of(i).points;
        let idx = state.progress[i];
        let v = a.speed;

        // Pure pursuit on the route.
        let lookahead = (0.8 * v).max(4.0);
        let mut target = *route.last().unwrap();
        for q in &route[idx..] {
            if q.dist(a.position) >= lookahead {
                target = *q;
                break;
            }
        }
        let local = (target - a.position).to_local(a.yaw);
        let d2 = local.norm_sq().max(1e-6);
        let max_steer = cfg.max_steer_deg.to_radians();
        let steer = (cfg.wheelbase * 2.0 * local.y / d2).atan().clamp(-max_steer, max_steer);

        // Cruise speed from the lane under the vehicle, slowed for curvature.
        let lane = self.map.lane_at(a.position, Some(a.yaw));
        let limit = lane
            .and_then(|lp| self.map.lane(lp.lane))
            .map(|l| l.speed_limit)
            .unwrap_or(7.0);
        let mut target_speed = limit * state.npc_speed_factor[i - 1];
        let ahead = (idx + 8).min(route.len() - 1);
        if ahead >= idx + 2 {
            let h0 = (route[idx + 1] - route[idx]).angle();
            let h1 = (route[ahead] - route[ahead - 1]).angle();
            let turn = normalize_angle(h1 - h0).abs();
            if turn > 0.2 {
                target_speed = target_speed.min(5.0);
            }
        }

        let mut accel = ((target_speed - v) * 2.0).clamp(-cfg.max_brake, cfg.max_accel);

        // Stop at the route end.
        let to_end = a.position.dist(*route.last().unwrap());
        let n = route.len();
        let passed = n >= 2 && idx + 2 >= n && (route[n - 1] - a.position).dot(route[n - 1] - route[n - 2]) <= 0.0;
        if to_end <= 1.0 || passed {
            accel = -cfg.max_brake;
        } else if to_end < v * v / 6.0 + 2.0 {
            accel = accel.min(-(v * v) / (2.0 * (to_end - 1.0).max(0.5)));
        }

        // Red or committed-to-stop yellow light at the end of the current lane.
        if let Some(lp) = lane {
            let l = self.map.lane(lp.lane).unwrap();
            if let Some(light) = l.light {
                let slot = self.map.light_slot(light).unwrap();
                let dist = l.length - lp.projection.s;
                let stop_dist = dist - 2.5;
                let color = state.light_colors[slot];
                let must_stop = match color {
                    LightColor::Red => true,
                    LightColor::Yellow => v * v / (2.0 * cfg.max_accel) < stop_dist,
                    LightColor::Green => false,
                };
                if must_stop && stop_dist > -0.5 && stop_dist < v * v / 4.0 + 8.0 {
                    accel = accel.min(-(v * v) / (2.0 * stop_dist.max(0.25)));
                    if stop_dist < 0.5 {
                        accel = -cfg.max_brake;
                    }
                }
            }
        }

        // Forward cone.
        let half = cfg.npc_cone_half_angle_deg.to_radians();
        for (j, b) in state.actors.iter().enumerate() {
            if j == i {
                continue;
            }
            let rel = b.position - a.position;
            let r = rel.norm();
            if r > cfg.npc_cone_range || r == 0.0 {
                continue;
            }
            if normalize_angle(rel.angle() - a.yaw).abs() <= half {
                accel = -cfg.max_brake;
                break;
            }
        }
        let accel = if accel < 0.0 { accel.max(-cfg.max_brake) * self.brake_factor() } else { accel };
        (accel, steer)
    }

    /// Advance one tick. A pure function of (state, control, world).
    pub fn step(&self, state: &SimState, control: Control) -> SimState {
        let cfg = &self.cfg;
        let mut next = state.clone();
        next.tick = state.tick + 1;
        next.light_colors = self.lights_at(next.tick);

        let ego = &state.actors[0];
        let accel = if control.brake > 0.0 {
            -control.brake.clamp(0.0, 1.0) * cfg.max_brake * self.brake_factor()
        } else {
            control.throttle.clamp(0.0, 1.0) * cfg.max_accel
        };
        let steer = control.steer.clamp(-1.0, 1.0) * cfg.max_steer_deg.to_radians();
        next.actors[0] = integrate_bicycle(ego, accel, steer, cfg, cfg.ego_speed_cap);

        let n_npc = self.scenario.npcs.len();
        for i in 1..=n_npc {
            let (a, s) = self.npc_command(state, i);
            next.actors[i] = integrate_bicycle(&state.actors[i], a, s, cfg, cfg.npc_speed_cap);
        }
        for i in 0..=n_npc {
            let route = &self.route_of(i).points;
            next.progress[i] = self.advance_progress(route, state.progress[i], next.actors[i].position);
        }

        for k in 0..self.scenario.pedestrians.len() {
            let i = 1 + n_npc + k;
            let route = &self.scenario.pedestrians[k];
            let prev = &state.actors[i];
            if next.tick <= route.depart_tick {
                continue;
            }
            let walked_cm = state.progress[i] + (cfg.pedestrian_speed * DT * 100.0).round() as usize;
            let total = self.route_lengths[k];
            let s = (walked_cm as f64 / 100.0).min(total);
            let position = point_at(&route.points, s);
            let moving = s < total;
            let heading = if position != prev.position { (position - prev.position).angle() } else { prev.yaw };
            let velocity = if moving { Vec2::from_angle(heading) * cfg.pedestrian_speed } else { Vec2::ZERO };
            next.progress[i] = walked_cm.min((total * 100.0).ceil() as usize);
            next.actors[i] = ActorState {
                position,
                velocity,
                acceleration: (velocity - prev.velocity) * (1.0 / DT),
                yaw: normalize_angle(heading),
                speed: velocity.norm(),
                kind: ActorKind::Pedestrian,
            };
        }
        next
    }

    /// Actor index the ego currently touches, if any.
    pub fn contact(&self, state: &SimState) -> Option<usize> {
        let n_npc = self.scenario.npcs.len();
        let e = &state.actors[0];
        ego_contact(
            e.position,
            e.yaw,
            (1..=n_npc).map(|i| (i, state.actors[i].position, state.actors[i].yaw)),
            (n_npc + 1..state.actors.len()).map(|i| (i, state.actors[i].position)),
            &self.cfg.extents,
        )
    }

    pub fn arrived(&self, state: &SimState) -> bool {
        state.actors[0].position.dist(self.scenario.ego.end()) <= self.cfg.arrival_radius
    }

    /// What the agent sees this tick.
    pub fn observe(&self, state: &SimState) -> Observation {
        let cfg = &self.cfg;
        let ego = state.actors[0];
        let w = &self.scenario.weather;
        let radius = cfg.observation_radius * (1.0 - cfg.fog_visibility_loss * w.fog_density / 100.0);
        let ped_radius = if w.sun_altitude_deg < 0.0 { radius * cfg.night_pedestrian_factor } else { radius };
        let mut visible: Vec<VisibleActor> = state
            .actors
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(id, a)| {
                let rel = a.position - ego.position;
                let range = rel.norm();
                let limit = if a.kind == ActorKind::Pedestrian { ped_radius } else { radius };
                (range <= limit).then(|| VisibleActor {
                    id,
                    state: *a,
                    range,
                    bearing: normalize_angle(rel.angle() - ego.yaw),
                })
            })
            .collect();
        visible.sort_by(|a, b| a.range.total_cmp(&b.range).then(a.id.cmp(&b.id)));

        let route = &self.scenario.ego.points;
        let from = state.progress[0] + 1;
        let to = (from + cfg.route_lookahead).min(route.len());
        let waypoints: Vec<Vec2> = route[from.min(route.len())..to].to_vec();
        let route_ends = to == route.len();

        let lane = self.map.lane_at(ego.position, Some(ego.yaw));
        let mut light = None;
        let speed_limit = match lane {
            Some(lp) => {
                let l = self.map.lane(lp.lane).unwrap();
                if let Some(id) = l.light {
                    let slot = self.map.light_slot(id).unwrap();
                    light = Some(LightObservation {
                        color: state.light_colors[slot],
                        distance: l.length - lp.projection.s,
                    });
                }
                l.speed_limit
            }
            None => waypoints
                .last()
                .and_then(|p| self.map.lane_at(*p, None))
                .and_then(|lp| self.map.lane(lp.lane))
                .map(|l| l.speed_limit)
                .unwrap_or_else(|| self.map.lanes.iter().map(|l| l.speed_limit).fold(f64::INFINITY, f64::min)),
        };
        Observation { tick: state.tick, ego, visible, waypoints, route_ends, light, speed_limit }
    }

    pub fn record(&self, state: &SimState) -> SceneRecord {
        crate::feedback::record_scene(state)
    }
}

/// Simulate `scenario` with `agent` until collision, arrival or timeout.
pub fn run(
    map: &LaneMap,
    scenario: &Scenario,
    agent: &mut dyn Agent,
    seed: u64,
    max_duration_s: f64,
    cfg: &SimConfig,
) -> Result<Trace> {
    if !(max_duration_s > 0.0) {
        return Err(crate::error::Error::Argument("max_duration_s must be > 0".into()));
    }
    let sim = Simulator::new(map, scenario, *cfg);
    let max_ticks = (max_duration_s * TICK_HZ as f64).round() as u32;
    let mut state = sim.spawn(seed)?;
    let n_npc = scenario.npcs.len();
    let mut trace = Trace::new(scenario.clone(), seed, agent.name(), max_duration_s);
    trace.push(&state, n_npc);
    let termination = loop {
        if let Some(id) = sim.contact(&state) {
            trace.controls.push(Control::idle());
            break Termination::Collision { counterpart: id };
        }
        if sim.arrived(&state) {
            trace.controls.push(Control::idle());
            break Termination::Arrived;
        }
        if state.tick >= max_ticks {
            trace.controls.push(Control::idle());
            break Termination::Timeout;
        }
        let obs = sim.observe(&state);
        let control = match agent.decide(&obs) {
            Ok(c) if c.throttle.is_finite() && c.brake.is_finite() && c.steer.is_finite() => Control {
                throttle: c.throttle.clamp(0.0, 1.0),
                brake: c.brake.clamp(0.0, 1.0),
                steer: c.steer.clamp(-1.0, 1.0),
            },
            Ok(c) => {
                trace.controls.push(Control::idle());
                break Termination::AgentFault { message: format!("non-finite control {c:?}") };
            }
            Err(message) => {
                trace.controls.push(Control::idle());
                break Termination::AgentFault { message };
            }
        };
        trace.controls.push(control);
        state = sim.step(&state, control);
        trace.push(&state, n_npc);
    };
    trace.termination = termination;
    Ok(trace)
}
