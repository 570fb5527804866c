//! Static road network: lanes, lights, intersections and the waypoint grid.

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_angle, offset_polyline, point_in_polygon, polyline_length, project_onto, Projection,
    Vec2,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use petgraph::algo::astar;
use petgraph::graph::{DiGraph, NodeIndex};
use std::collections::HashMap;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_WAYPOINT_SPACING: f64 = 5.0;

pub type LaneId = u32;
pub type LightId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightColor {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDoc {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit: f64,
    pub left_crossable: bool,
    pub right_crossable: bool,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    /// Light controlling entry past this lane's end.
    #[serde(default)]
    pub light: Option<LightId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightDoc {
    pub id: LightId,
    pub position: Vec2,
    pub schedule: Vec<(LightColor, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionDoc {
    pub polygon: Vec<Vec2>,
    #[serde(default)]
    pub lights: Vec<LightId>,
}

/// The on-disk map schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub waypoint_spacing: Option<f64>,
    pub lanes: Vec<LaneDoc>,
    #[serde(default)]
    pub lights: Vec<LightDoc>,
    #[serde(default)]
    pub intersections: Vec<IntersectionDoc>,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit: f64,
    pub left_crossable: bool,
    pub right_crossable: bool,
    pub successors: Vec<LaneId>,
    pub light: Option<LightId>,
    pub length: f64,
    pub left_boundary: Vec<Vec2>,
    pub right_boundary: Vec<Vec2>,
    pub bbox: (Vec2, Vec2),
}

impl Lane {
    pub fn start(&self) -> Vec2 {
        self.centerline[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.centerline.last().unwrap()
    }

    pub fn heading_at_start(&self) -> f64 {
        (self.centerline[1] - self.centerline[0]).angle()
    }

    pub fn heading_at_end(&self) -> f64 {
        let n = self.centerline.len();
        (self.centerline[n - 1] - self.centerline[n - 2]).angle()
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        crate::geometry::point_at(&self.centerline, s)
    }

    fn bbox_contains(&self, p: Vec2, margin: f64) -> bool {
        p.x >= self.bbox.0.x - margin
            && p.x <= self.bbox.1.x + margin
            && p.y >= self.bbox.0.y - margin
            && p.y <= self.bbox.1.y + margin
    }
}

#[derive(Debug, Clone)]
pub struct Light {
    pub id: LightId,
    pub position: Vec2,
    pub schedule: Vec<(LightColor, f64)>,
    pub cycle: f64,
}

impl Light {
    /// Color at simulation time `t` seconds.
    pub fn color_at(&self, t: f64) -> LightColor {
        let mut phase = t.rem_euclid(self.cycle);
        for &(color, dur) in &self.schedule {
            if phase < dur {
                return color;
            }
            phase -= dur;
        }
        self.schedule.last().unwrap().0
    }
}

#[derive(Debug, Clone)]
pub struct Intersection {
    pub polygon: Vec<Vec2>,
    pub lights: Vec<LightId>,
}

impl Intersection {
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.polygon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub pos: Vec2,
    pub lane: LaneId,
}

/// A validated, immutable road network.
#[derive(Debug, Clone)]
pub struct LaneMap {
    pub name: String,
    pub lanes: Vec<Lane>,
    pub lights: Vec<Light>,
    pub intersections: Vec<Intersection>,
    pub waypoints: Vec<Waypoint>,
    pub waypoint_spacing: f64,
    lane_index: HashMap<LaneId, usize>,
    light_index: HashMap<LightId, usize>,
    doc: MapDocument,
}

/// Where a point sits relative to the lane network.
#[derive(Debug, Clone, Copy)]
pub struct LanePosition {
    pub lane: LaneId,
    pub projection: Projection,
}

impl LaneMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MapDocument = serde_json::from_str(text).map_err(|e| Error::from_json("map", e))?;
        Self::from_document(doc)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    /// Validate a document and derive lane boundaries and the waypoint grid.
    pub fn from_document(doc: MapDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                doc.schema_version
            )));
        }
        let spacing = doc.waypoint_spacing.unwrap_or(DEFAULT_WAYPOINT_SPACING);
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Validation("waypoint_spacing: must be positive".into()));
        }
        if doc.lanes.is_empty() {
            return Err(Error::Validation("lanes: at least one lane required".into()));
        }
        let mut light_index = HashMap::new();
        let mut lights = Vec::with_capacity(doc.lights.len());
        for (i, l) in doc.lights.iter().enumerate() {
            if light_index.insert(l.id, i).is_some() {
                return Err(Error::Validation(format!("lights[{i}].id: duplicate id {}", l.id)));
            }
            if l.schedule.is_empty() {
                return Err(Error::Validation(format!("lights[{i}].schedule: empty")));
            }
            if l.schedule.iter().any(|&(_, d)| !(d.is_finite() && d >= 0.0)) {
                return Err(Error::Validation(format!("lights[{i}].schedule: bad duration")));
            }
            let cycle: f64 = l.schedule.iter().map(|&(_, d)| d).sum();
            if cycle <= 0.0 {
                return Err(Error::Validation(format!("lights[{i}].schedule: cycle must be > 0")));
            }
            if !l.position.is_finite() {
                return Err(Error::Validation(format!("lights[{i}].position: not finite")));
            }
            lights.push(Light { id: l.id, position: l.position, schedule: l.schedule.clone(), cycle });
        }

        let mut lane_index = HashMap::new();
        let mut lanes = Vec::with_capacity(doc.lanes.len());
        for (i, l) in doc.lanes.iter().enumerate() {
            if lane_index.insert(l.id, i).is_some() {
                return Err(Error::Validation(format!("lanes[{i}].id: duplicate id {}", l.id)));
            }
            if l.centerline.len() < 2 {
                return Err(Error::Validation(format!(
                    "lanes[{i}].centerline: needs at least 2 points"
                )));
            }
            if l.centerline.iter().any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!("lanes[{i}].centerline: not finite")));
            }
            if l.centerline.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!(
                    "lanes[{i}].centerline: repeated point (zero-length segment)"
                )));
            }
            let length = polyline_length(&l.centerline);
            if !(length > 0.0) {
                return Err(Error::Validation(format!("lanes[{i}].centerline: zero length")));
            }
            if !(l.width.is_finite() && l.width > 0.0) {
                return Err(Error::Validation(format!("lanes[{i}].width: must be > 0")));
            }
            if !(l.speed_limit.is_finite() && l.speed_limit > 0.0) {
                return Err(Error::Validation(format!("lanes[{i}].speed_limit: must be > 0")));
            }
            if let Some(lid) = l.light {
                if !light_index.contains_key(&lid) {
                    return Err(Error::Validation(format!("lanes[{i}].light: unknown light {lid}")));
                }
            }
            let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &l.centerline {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            lanes.push(Lane {
                id: l.id,
                centerline: l.centerline.clone(),
                width: l.width,
                speed_limit: l.speed_limit,
                left_crossable: l.left_crossable,
                right_crossable: l.right_crossable,
                successors: l.successors.clone(),
                light: l.light,
                length,
                left_boundary: offset_polyline(&l.centerline, l.width * 0.5),
                right_boundary: offset_polyline(&l.centerline, -l.width * 0.5),
                bbox: (lo, hi),
            });
        }
        for (i, l) in lanes.iter().enumerate() {
            for s in &l.successors {
                if !lane_index.contains_key(s) {
                    return Err(Error::Validation(format!(
                        "lanes[{i}].successors: unknown lane {s}"
                    )));
                }
            }
        }
        let mut intersections = Vec::with_capacity(doc.intersections.len());
        for (i, x) in doc.intersections.iter().enumerate() {
            if x.polygon.len() < 3 || x.polygon.iter().any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!(
                    "intersections[{i}].polygon: needs at least 3 finite points"
                )));
            }
            for lid in &x.lights {
                if !light_index.contains_key(lid) {
                    return Err(Error::Validation(format!(
                        "intersections[{i}].lights: unknown light {lid}"
                    )));
                }
            }
            intersections.push(Intersection { polygon: x.polygon.clone(), lights: x.lights.clone() });
        }

        let mut waypoints = Vec::new();
        for l in &lanes {
            let n = (l.length / spacing + 1e-9).floor() as usize;
            for k in 0..=n {
                waypoints.push(Waypoint { pos: l.point_at(k as f64 * spacing), lane: l.id });
            }
        }

        Ok(LaneMap {
            name: doc.name.clone(),
            lanes,
            lights,
            intersections,
            waypoints,
            waypoint_spacing: spacing,
            lane_index,
            light_index,
            doc,
        })
    }

    pub fn document(&self) -> &MapDocument {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.doc).expect("map document serializes")
    }

    /// SHA-256 over the canonical JSON form of the document.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lane_index.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn light(&self, id: LightId) -> Option<&Light> {
        self.light_index.get(&id).map(|&i| &self.lights[i])
    }

    pub fn light_slot(&self, id: LightId) -> Option<usize> {
        self.light_index.get(&id).copied()
    }

    pub fn waypoints_of_lane(&self, id: LaneId) -> impl Iterator<Item = &Waypoint> {
        self.waypoints.iter().filter(move |w| w.lane == id)
    }

    /// Lane whose surface contains `p`, preferring lanes aligned with `yaw` when given.
    pub fn lane_at(&self, p: Vec2, yaw: Option<f64>) -> Option<LanePosition> {
        let mut best: Option<(f64, LanePosition)> = None;
        for l in &self.lanes {
            if !l.bbox_contains(p, l.width) {
                continue;
            }
            let proj = project_onto(&l.centerline, p);
            if proj.lateral.abs() > l.width * 0.5 {
                continue;
            }
            let along_ok = proj.s > 0.0 && proj.s < l.length
                || proj.point.dist(p) <= proj.lateral.abs() + 1e-9;
            if !along_ok {
                continue;
            }
            let mut score = proj.lateral.abs();
            if let Some(y) = yaw {
                let dh = normalize_angle(y - proj.heading).abs();
                if dh > std::f64::consts::FRAC_PI_2 {
                    continue;
                }
                score += dh;
            }
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, LanePosition { lane: l.id, projection: proj }));
            }
        }
        best.map(|(_, lp)| lp)
    }

    /// True when `p` lies on the surface of any lane.
    pub fn on_road(&self, p: Vec2) -> bool {
        self.lane_at(p, None).is_some()
    }

    pub fn intersection_at(&self, p: Vec2) -> Option<usize> {
        self.intersections.iter().position(|x| x.contains(p))
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for l in &self.lanes {
            lo = Vec2::new(lo.x.min(l.bbox.0.x), lo.y.min(l.bbox.0.y));
            hi = Vec2::new(hi.x.max(l.bbox.1.x), hi.y.max(l.bbox.1.y));
        }
        (lo, hi)
    }

    /// Smooth connector from the end of `from` to the start of `to` (cubic Bézier, ~1 m samples).
    pub fn connector(&self, from: LaneId, to: LaneId) -> Vec<Vec2> {
        let a = self.lane(from).expect("known lane");
        let b = self.lane(to).expect("known lane");
        let p0 = a.end();
        let p3 = b.start();
        let gap = p0.dist(p3);
        if gap < 1e-9 {
            return vec![p0];
        }
        let d = gap * 0.45;
        let p1 = p0 + Vec2::from_angle(a.heading_at_end()) * d;
        let p2 = p3 - Vec2::from_angle(b.heading_at_start()) * d;
        let n = gap.ceil().max(2.0) as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                let u = 1.0 - t;
                p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
            })
            .collect()
    }

    /// Cheapest lane sequence from `start` to `goal` (by summed lane length).
    pub fn plan_lanes(&self, start: LaneId, goal: LaneId) -> Option<Vec<LaneId>> {
        self.plan_lanes_by(start, goal, |_, l| l.length)
    }

    /// Cheapest lane sequence from `start` to `goal`, where leaving a lane
    /// costs `cost(lane index, lane)`.
    pub fn plan_lanes_by(&self, start: LaneId, goal: LaneId, cost: impl Fn(usize, &Lane) -> f64) -> Option<Vec<LaneId>> {
        if start == goal {
            return Some(vec![start]);
        }
        let s = *self.lane_index.get(&start)?;
        let g = *self.lane_index.get(&goal)?;
        let mut graph = DiGraph::<(), f64>::with_capacity(self.lanes.len(), 0);
        for _ in &self.lanes {
            graph.add_node(());
        }
        for (u, lane) in self.lanes.iter().enumerate() {
            let c = cost(u, lane);
            for succ in &lane.successors {
                graph.add_edge(NodeIndex::new(u), NodeIndex::new(self.lane_index[succ]), c);
            }
        }
        let (_, path) = astar(&graph, NodeIndex::new(s), |n| n.index() == g, |e| *e.weight(), |_| 0.0)?;
        Some(path.into_iter().map(|n| self.lanes[n.index()].id).collect())
    }
}
/// Maps shipped with the crate.
pub mod bundled {
    use super::LaneMap;

    pub const STRAIGHT: &str = include_str!("../fixtures/maps/straight.json");
    pub const CROSSMAP: &str = include_str!("../fixtures/maps/crossmap.json");
    pub const TOWN: &str = include_str!("../fixtures/maps/town.json");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "straight" => Some(STRAIGHT),
            "crossmap" => Some(CROSSMAP),
            "town" => Some(TOWN),
            _ => None,
        }
    }

    pub fn straight() -> LaneMap {
        LaneMap::from_json(STRAIGHT).expect("bundled straight map is valid")
    }

    pub fn crossmap() -> LaneMap {
        LaneMap::from_json(CROSSMAP).expect("bundled crossmap is valid")
    }

    pub fn town() -> LaneMap {
        LaneMap::from_json(TOWN).expect("bundled town map is valid")
    }
}
