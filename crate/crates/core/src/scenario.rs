//! Scenario chromosome: routes for every actor plus weather.

use crate::error::{Error, Result};
use crate::geometry::{polyline_length, project_onto, resample, Vec2};
use crate::map::{LaneId, LaneMap};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Spacing of route polylines after construction (m).
pub const ROUTE_SPACING: f64 = 2.0;
/// Minimum spawn separation between any two actors (m).
pub const MIN_SPAWN_GAP: f64 = 2.0;
/// Separation used by the generators for vehicle pairs so bodies never start overlapped.
pub const VEHICLE_SPAWN_GAP: f64 = 8.0;
/// Distance from a road's outer lane edge to the sidewalk line (m).
pub const SIDEWALK_OFFSET: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherParams {
    pub rain_intensity: f64,
    pub sun_altitude_deg: f64,
    pub fog_density: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        WeatherParams { rain_intensity: 0.0, sun_altitude_deg: 45.0, fog_density: 0.0 }
    }
}

impl WeatherParams {
    pub const RAIN_RANGE: (f64, f64) = (0.0, 100.0);
    pub const SUN_RANGE: (f64, f64) = (-90.0, 90.0);
    pub const FOG_RANGE: (f64, f64) = (0.0, 100.0);

    pub fn is_valid(&self) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        within(self.rain_intensity, Self::RAIN_RANGE)
            && within(self.sun_altitude_deg, Self::SUN_RANGE)
            && within(self.fog_density, Self::FOG_RANGE)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        WeatherParams {
            rain_intensity: rng.gen_range(Self::RAIN_RANGE.0..=Self::RAIN_RANGE.1),
            sun_altitude_deg: rng.gen_range(Self::SUN_RANGE.0..=Self::SUN_RANGE.1),
            fog_density: rng.gen_range(Self::FOG_RANGE.0..=Self::FOG_RANGE.1),
        }
    }
}

/// A path for one actor. Vehicle routes reference the lanes they traverse;
/// pedestrian routes are free polylines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    #[serde(default)]
    pub lanes: Vec<LaneId>,
    #[serde(default)]
    pub start_offset: f64,
    #[serde(default)]
    pub end_offset: f64,
    /// Tick at which the actor starts moving.
    #[serde(default)]
    pub depart_tick: u32,
    pub points: Vec<Vec2>,
}

fn sub_polyline(pts: &[Vec2], s0: f64, s1: f64) -> Vec<Vec2> {
    let mut out = vec![crate::geometry::point_at(pts, s0)];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let len = w[0].dist(w[1]);
        let end = acc + len;
        if end > s0 && end < s1 {
            out.push(w[1]);
        }
        acc = end;
    }
    out.push(crate::geometry::point_at(pts, s1));
    out
}

fn push_dedup(dst: &mut Vec<Vec2>, src: impl IntoIterator<Item = Vec2>) {
    for p in src {
        if dst.last().map_or(true, |q| q.dist(p) > 1e-6) {
            dst.push(p);
        }
    }
}

impl Route {
    /// Build a vehicle route along `lanes`, from `start_offset` on the first lane
    /// to `end_offset` on the last.
    pub fn vehicle(map: &LaneMap, lanes: Vec<LaneId>, start_offset: f64, end_offset: f64) -> Result<Route> {
        if lanes.is_empty() {
            return Err(Error::Validation("route: no lanes".into()));
        }
        let mut pts = Vec::new();
        for (k, &id) in lanes.iter().enumerate() {
            let lane = map
                .lane(id)
                .ok_or_else(|| Error::Validation(format!("route: unknown lane {id}")))?;
            if k > 0 {
                let prev = lanes[k - 1];
                if !map.lane(prev).unwrap().successors.contains(&id) {
                    return Err(Error::Validation(format!("route: lane {id} does not follow {prev}")));
                }
                push_dedup(&mut pts, map.connector(prev, id));
            }
            let s0 = if k == 0 { start_offset.clamp(0.0, lane.length) } else { 0.0 };
            let s1 = if k + 1 == lanes.len() { end_offset.clamp(0.0, lane.length) } else { lane.length };
            if s1 < s0 + 1e-6 {
                return Err(Error::Validation(format!(
                    "route: end offset {s1} precedes start offset {s0} on lane {id}"
                )));
            }
            push_dedup(&mut pts, sub_polyline(&lane.centerline, s0, s1));
        }
        if pts.len() < 2 {
            return Err(Error::Validation("route: degenerate polyline".into()));
        }
        Ok(Route {
            lanes,
            start_offset,
            end_offset,
            depart_tick: 0,
            points: resample(&pts, ROUTE_SPACING),
        })
    }

    pub fn pedestrian(points: Vec<Vec2>, depart_tick: u32) -> Route {
        Route { lanes: Vec::new(), start_offset: 0.0, end_offset: 0.0, depart_tick, points }
    }

    pub fn is_vehicle(&self) -> bool {
        !self.lanes.is_empty()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }

    pub fn start_heading(&self) -> f64 {
        (self.points[1] - self.points[0]).angle()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    #[serde(default)]
    pub parents: Vec<u64>,
    pub ego: Route,
    pub npcs: Vec<Route>,
    pub pedestrians: Vec<Route>,
    pub weather: WeatherParams,
}

/// Identifies an actor of a scenario by its slot in the simulator's actor list.
pub fn actor_label(scenario: &Scenario, index: usize) -> String {
    let n = scenario.npcs.len();
    match index {
        0 => "ego".to_string(),
        i if i <= n => format!("npc{}", i - 1),
        i => format!("ped{}", i - 1 - n),
    }
}

impl Scenario {
    pub fn vehicle_count(&self) -> usize {
        1 + self.npcs.len()
    }

    /// All spawn positions in simulator actor order.
    pub fn spawn_points(&self) -> Vec<Vec2> {
        std::iter::once(&self.ego)
            .chain(&self.npcs)
            .chain(&self.pedestrians)
            .map(|r| r.start())
            .collect()
    }

    /// Check the scenario invariants against a map: routes on-map, weather in
    /// range, spawns pairwise more than `MIN_SPAWN_GAP` apart.
    pub fn validate(&self, map: &LaneMap) -> Result<()> {
        if !self.weather.is_valid() {
            return Err(Error::Validation("weather: parameter out of range".into()));
        }
        let mut all = vec![&self.ego];
        all.extend(&self.npcs);
        all.extend(&self.pedestrians);
        for (i, r) in all.iter().enumerate() {
            if r.points.len() < 2 || r.points.iter().any(|p| !p.is_finite()) {
                return Err(Error::Spawn(format!("{}: degenerate route", actor_label(self, i))));
            }
        }
        for (i, r) in std::iter::once(&self.ego).chain(&self.npcs).enumerate() {
            if map.lane_at(r.start(), None).is_none() {
                return Err(Error::Spawn(format!("{}: start off road", actor_label(self, i))));
            }
        }
        let (lo, hi) = map.bounds();
        let margin = 20.0;
        for (k, r) in self.pedestrians.iter().enumerate() {
            let p = r.start();
            if p.x < lo.x - margin || p.x > hi.x + margin || p.y < lo.y - margin || p.y > hi.y + margin {
                return Err(Error::Spawn(format!("ped{k}: start outside map")));
            }
        }
        let spawns = self.spawn_points();
        for i in 0..spawns.len() {
            for j in i + 1..spawns.len() {
                if spawns[i].dist(spawns[j]) <= MIN_SPAWN_GAP {
                    return Err(Error::Spawn(format!(
                        "overlapping spawns: {} and {}",
                        actor_label(self, i),
                        actor_label(self, j)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples random on-map routes.
pub struct RouteSampler<'a> {
    pub map: &'a LaneMap,
    pub min_length: f64,
    pub max_length: f64,
}

impl<'a> RouteSampler<'a> {
    pub fn new(map: &'a LaneMap) -> Self {
        RouteSampler { map, min_length: 40.0, max_length: 400.0 }
    }

    fn random_lane_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (LaneId, f64) {
        let total: f64 = self.map.lanes.iter().map(|l| l.length).sum();
        let mut pick = rng.gen_range(0.0..total);
        for l in &self.map.lanes {
            if pick < l.length {
                return (l.id, pick);
            }
            pick -= l.length;
        }
        let l = self.map.lanes.last().unwrap();
        (l.id, l.length * 0.5)
    }

    /// Random start and end anywhere on the map, joined by the cheapest lane path.
    pub fn vehicle_route<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Route> {
        for _ in 0..200 {
            let (sl, so) = self.random_lane_point(rng);
            let (el, eo) = self.random_lane_point(rng);
            let Some(lanes) = self.map.plan_lanes(sl, el) else { continue };
            if lanes.len() == 1 && eo <= so {
                continue;
            }
            let Ok(route) = Route::vehicle(self.map, lanes, so, eo) else { continue };
            let len = route.length();
            if len >= self.min_length && len <= self.max_length {
                return Some(route);
            }
        }
        None
    }

    /// Re-plan a vehicle route keeping its first and last lane, moving start and
    /// end by at most `max_shift` metres along those lanes. The path between
    /// them is the cheapest under randomly inflated lane costs.
    pub fn perturb_route<R: Rng + ?Sized>(&self, route: &Route, max_shift: f64, rng: &mut R) -> Option<Route> {
        let first = *route.lanes.first()?;
        let last = *route.lanes.last()?;
        let fl = self.map.lane(first)?.length;
        let ll = self.map.lane(last)?.length;
        for _ in 0..20 {
            let so = (route.start_offset + rng.gen_range(-max_shift..=max_shift)).clamp(0.0, fl);
            let eo = (route.end_offset + rng.gen_range(-max_shift..=max_shift)).clamp(0.0, ll);
            let lanes = if first == last && eo > so + 5.0 {
                vec![first]
            } else if first == last {
                continue;
            } else {
                let jitter: Vec<f64> = (0..self.map.lanes.len()).map(|_| rng.gen_range(1.0..3.0)).collect();
                match self.map.plan_lanes_by(first, last, |i, l| l.length * jitter[i]) {
                    Some(lanes) => lanes,
                    None => route.lanes.clone(),
                }
            };
            if let Ok(r) = Route::vehicle(self.map, lanes, so, eo) {
                if r.length() >= 10.0 {
                    return Some(r);
                }
            }
        }
        None
    }

    /// A pedestrian crossing the road at `anchor`: starts on one sidewalk and ends
    /// on the opposite one.
    pub fn crossing_at<R: Rng + ?Sized>(&self, anchor: Vec2, rng: &mut R) -> Option<(Vec2, Vec2)> {
        let lp = self.map.lane_at(anchor, None).or_else(|| {
            let mut best: Option<(f64, crate::map::LanePosition)> = None;
            for l in &self.map.lanes {
                let proj = project_onto(&l.centerline, anchor);
                let d = proj.point.dist(anchor);
                if best.as_ref().map_or(true, |(b, _)| d < *b) {
                    best = Some((d, crate::map::LanePosition { lane: l.id, projection: proj }));
                }
            }
            best.map(|(_, lp)| lp)
        })?;
        let c = lp.projection.point;
        let n = Vec2::from_angle(lp.projection.heading).perp();
        let dir = Vec2::from_angle(lp.projection.heading);
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        let mut half_w = 0.0f64;
        for l in &self.map.lanes {
            let proj = project_onto(&l.centerline, c);
            if proj.s <= 0.0 || proj.s >= l.length {
                continue;
            }
            let ldir = Vec2::from_angle(proj.heading);
            if ldir.dot(dir).abs() < 0.9 {
                continue;
            }
            let t = (proj.point - c).dot(n);
            if t.abs() > 12.0 {
                continue;
            }
            t_min = t_min.min(t);
            t_max = t_max.max(t);
            half_w = half_w.max(l.width * 0.5);
        }
        if !t_min.is_finite() {
            return None;
        }
        let a = c + n * (t_max + half_w + SIDEWALK_OFFSET);
        let b = c + n * (t_min - half_w - SIDEWALK_OFFSET);
        Some(if rng.gen_bool(0.5) { (a, b) } else { (b, a) })
    }

    /// Crossing pedestrian at a uniformly random point of the network.
    pub fn pedestrian_route<R: Rng + ?Sized>(&self, max_depart_tick: u32, rng: &mut R) -> Option<Route> {
        for _ in 0..50 {
            let (lane, s) = self.random_lane_point(rng);
            let anchor = self.map.lane(lane)?.point_at(s);
            if let Some((a, b)) = self.crossing_at(anchor, rng) {
                let depart = rng.gen_range(0..=max_depart_tick);
                return Some(Route::pedestrian(vec![a, b], depart));
            }
        }
        None
    }
}

/// Hand-built scenarios on the bundled maps used as oracle fixtures.
pub mod fixtures {
    use super::{Route, Scenario, WeatherParams};
    use crate::geometry::Vec2;
    use crate::map::LaneMap;

    pub const NAMES: [&str; 4] = ["empty_road", "lead_vehicle", "crossing_pedestrian", "light_stop"];

    fn ego_only(ego: Route) -> Scenario {
        Scenario { id: 0, parents: Vec::new(), ego, npcs: Vec::new(), pedestrians: Vec::new(), weather: WeatherParams::default() }
    }

    /// Ego alone on the straight map.
    pub fn empty_road(straight: &LaneMap) -> Scenario {
        ego_only(Route::vehicle(straight, vec![0], 10.0, 190.0).expect("straight map lane 0"))
    }

    /// A lead NPC that stops 100 m down the ego's lane.
    pub fn lead_vehicle(straight: &LaneMap) -> Scenario {
        Scenario { npcs: vec![Route::vehicle(straight, vec![0], 40.0, 100.0).expect("straight map lane 0")], ..empty_road(straight) }
    }

    /// A pedestrian stepping off the curb as the ego arrives at x = 100 m.
    pub fn crossing_pedestrian(straight: &LaneMap) -> Scenario {
        let ped = Route::pedestrian(vec![Vec2::new(100.0, -3.25), Vec2::new(100.0, 6.75)], 210);
        Scenario { pedestrians: vec![ped], ..empty_road(straight) }
    }

    /// Ego driving straight through the signalled crossing, meeting yellow.
    pub fn light_stop(crossmap: &LaneMap) -> Scenario {
        ego_only(Route::vehicle(crossmap, vec![0, 2], 10.0, 90.0).expect("crossmap lanes 0 and 2"))
    }

    /// Bundled map name and scenario of a fixture.
    pub fn by_name(name: &str) -> Option<(&'static str, Scenario)> {
        use crate::map::bundled;
        Some(match name {
            "empty_road" => ("straight", empty_road(&bundled::straight())),
            "lead_vehicle" => ("straight", lead_vehicle(&bundled::straight())),
            "crossing_pedestrian" => ("straight", crossing_pedestrian(&bundled::straight())),
            "light_stop" => ("crossmap", light_stop(&bundled::crossmap())),
            _ => return None,
        })
    }
}
