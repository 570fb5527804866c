//! Violation detectors run over a completed trace, and unique-violation
//! deduplication.

use crate::feedback::Trace;
use crate::geometry::{normalize_angle, segments_intersect, Vec2};
use crate::map::{LaneId, LaneMap, LightColor};
use crate::sim::{ego_contact, Extents, DT};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Collision,
    LaneInvasion,
    Speeding,
    RedLight,
    Stuck,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 5] = [
        ViolationKind::Collision,
        ViolationKind::LaneInvasion,
        ViolationKind::Speeding,
        ViolationKind::RedLight,
        ViolationKind::Stuck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Collision => "collision",
            ViolationKind::LaneInvasion => "lane_invasion",
            ViolationKind::Speeding => "speeding",
            ViolationKind::RedLight => "red_light",
            ViolationKind::Stuck => "stuck",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub tick: usize,
    pub sim_time: f64,
    pub location: Vec2,
    /// Simulator actor index of the other party, if any.
    pub counterpart: Option<usize>,
    pub detail: String,
    #[serde(default)]
    pub possibly_congested: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub t_speeding_s: f64,
    pub t_stuck_s: f64,
    pub speed_tolerance: f64,
    pub stuck_speed: f64,
    pub dedup_window_s: f64,
    pub dedup_radius_m: f64,
    /// Range ahead of a stuck ego within which another actor marks the stop
    /// as possibly caused by congestion.
    pub congestion_range_m: f64,
    pub extents: Extents,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            t_speeding_s: 5.0,
            t_stuck_s: 90.0,
            speed_tolerance: 0.05,
            stuck_speed: 0.1,
            dedup_window_s: 10.0,
            dedup_radius_m: 30.0,
            congestion_range_m: 10.0,
            extents: Extents::default(),
        }
    }
}

impl OracleConfig {
    pub fn is_valid(&self) -> bool {
        [
            self.t_speeding_s,
            self.t_stuck_s,
            self.speed_tolerance,
            self.stuck_speed,
            self.dedup_window_s,
            self.dedup_radius_m,
            self.congestion_range_m,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }
}

fn ticks_for(seconds: f64) -> usize {
    (seconds / DT).round().max(1.0) as usize
}

fn violation(trace: &Trace, kind: ViolationKind, tick: usize, counterpart: Option<usize>, detail: String) -> Violation {
    Violation {
        kind,
        tick,
        sim_time: tick as f64 * DT,
        location: trace.scenes[tick].position(0),
        counterpart,
        detail,
        possibly_congested: false,
    }
}

/// Start ticks of maximal runs of `pred` lasting at least `min_len` ticks.
fn sustained(n: usize, min_len: usize, mut pred: impl FnMut(usize) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = None;
    for t in 0..=n {
        let on = t < n && pred(t);
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= min_len {
                    out.push(s);
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn detect_collisions(trace: &Trace, ext: &Extents) -> Vec<Violation> {
    let n_veh = trace.vehicle_count();
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for (t, s) in trace.scenes.iter().enumerate() {
        let hit = ego_contact(
            s.position(0),
            s.yaw(0),
            (1..n_veh).map(|v| (v, s.position(v), s.yaw(v))),
            trace.pedestrians[t].iter().enumerate().map(|(k, p)| (n_veh + k, *p)),
            ext,
        );
        if let Some(id) = hit {
            if prev != Some(id) {
                let label = crate::scenario::actor_label(&trace.scenario, id);
                out.push(violation(trace, ViolationKind::Collision, t, Some(id), format!("contact with {label}")));
            }
        }
        prev = hit;
    }
    out
}

fn detect_lane_invasions(trace: &Trace, map: &LaneMap) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in 1..trace.len() {
        let a = trace.scenes[t - 1].position(0);
        let b = trace.scenes[t].position(0);
        if a == b {
            continue;
        }
        let crossed = map.lanes.iter().find_map(|l| {
            let m = l.width;
            let lo = Vec2::new(a.x.min(b.x), a.y.min(b.y));
            let hi = Vec2::new(a.x.max(b.x), a.y.max(b.y));
            if hi.x < l.bbox.0.x - m || lo.x > l.bbox.1.x + m || hi.y < l.bbox.0.y - m || lo.y > l.bbox.1.y + m {
                return None;
            }
            let sides = [(!l.left_crossable, &l.left_boundary, "left"), (!l.right_crossable, &l.right_boundary, "right")];
            sides.into_iter().find_map(|(solid, line, side)| {
                (solid && line.windows(2).any(|w| segments_intersect(a, b, w[0], w[1]))).then(|| (l.id, side))
            })
        });
        if let Some((lane, side)) = crossed {
            out.push(violation(
                trace,
                ViolationKind::LaneInvasion,
                t,
                None,
                format!("crossed solid {side} boundary of lane {lane}"),
            ));
        }
    }
    out
}

/// Lane under the ego at each tick, holding the last known lane through gaps.
fn ego_lanes(trace: &Trace, map: &LaneMap) -> Vec<Option<LaneId>> {
    let mut last = None;
    trace
        .scenes
        .iter()
        .map(|s| {
            if let Some(lp) = map.lane_at(s.position(0), Some(s.yaw(0))) {
                last = Some(lp.lane);
            }
            last
        })
        .collect()
}

fn detect_speeding(trace: &Trace, map: &LaneMap, lanes: &[Option<LaneId>], cfg: &OracleConfig) -> Vec<Violation> {
    let limit = |t: usize| lanes[t].and_then(|id| map.lane(id)).map(|l| l.speed_limit);
    let over = |t: usize| match limit(t) {
        Some(lim) => trace.scenes[t].velocity(0).norm() > lim * (1.0 + cfg.speed_tolerance),
        None => false,
    };
    sustained(trace.len(), ticks_for(cfg.t_speeding_s), over)
        .into_iter()
        .map(|t| {
            let lim = limit(t).unwrap_or(0.0);
            violation(trace, ViolationKind::Speeding, t, None, format!("above {lim:.2} m/s limit"))
        })
        .collect()
}

fn detect_red_lights(trace: &Trace, map: &LaneMap, lanes: &[Option<LaneId>]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut inside = trace.scenes.first().and_then(|s| map.intersection_at(s.position(0)));
    let mut approach: Option<LaneId> = None;
    for t in 0..trace.len() {
        let now = map.intersection_at(trace.scenes[t].position(0));
        if now.is_none() {
            approach = lanes[t];
        }
        if let (Some(_), None) = (now, inside) {
            let light = approach.and_then(|id| map.lane(id)).and_then(|l| l.light);
            if let Some(light) = light {
                let slot = map.light_slot(light).unwrap();
                if trace.light_color(t, slot) == LightColor::Red {
                    out.push(violation(
                        trace,
                        ViolationKind::RedLight,
                        t,
                        None,
                        format!("entered intersection on red light {light}"),
                    ));
                }
            }
        }
        inside = now;
    }
    out
}

fn detect_stuck(trace: &Trace, cfg: &OracleConfig) -> Vec<Violation> {
    let still = |t: usize| trace.scenes[t].velocity(0).norm() < cfg.stuck_speed;
    let n_veh = trace.vehicle_count();
    sustained(trace.len(), ticks_for(cfg.t_stuck_s), still)
        .into_iter()
        .map(|t| {
            let s = &trace.scenes[t];
            let ego = s.position(0);
            let yaw = s.yaw(0);
            let ahead = |p: Vec2| {
                let rel = p - ego;
                rel.norm() <= cfg.congestion_range_m
                    && normalize_angle(rel.angle() - yaw).abs() <= std::f64::consts::FRAC_PI_4
            };
            let congested = (1..n_veh).any(|v| ahead(s.position(v))) || trace.pedestrians[t].iter().any(|p| ahead(*p));
            let mut v = violation(trace, ViolationKind::Stuck, t, None, format!("stationary for {:.0} s or more", cfg.t_stuck_s));
            v.possibly_congested = congested;
            v
        })
        .collect()
}

/// Run all five detectors. Output is ordered by tick, then kind.
pub fn detect(trace: &Trace, map: &LaneMap, cfg: &OracleConfig) -> Vec<Violation> {
    if trace.is_empty() {
        return Vec::new();
    }
    let lanes = ego_lanes(trace, map);
    let mut out = detect_collisions(trace, &cfg.extents);
    out.extend(detect_lane_invasions(trace, map));
    out.extend(detect_speeding(trace, map, &lanes, cfg));
    out.extend(detect_red_lights(trace, map, &lanes));
    out.extend(detect_stuck(trace, cfg));
    out.sort_by(|a, b| a.tick.cmp(&b.tick).then(a.kind.cmp(&b.kind)));
    out
}

/// Same kind, within the time window and the radius of `rep`.
pub fn same_cluster(rep: &Violation, v: &Violation, cfg: &OracleConfig) -> bool {
    rep.kind == v.kind
        && (rep.sim_time - v.sim_time).abs() <= cfg.dedup_window_s
        && rep.location.dist(v.location) <= cfg.dedup_radius_m
}

/// Greedy clustering in input order; each cluster is represented by its
/// first member.
pub fn dedup(violations: &[Violation], cfg: &OracleConfig) -> Vec<Violation> {
    let mut reps: Vec<Violation> = Vec::new();
    for v in violations {
        if !reps.iter().any(|r| same_cluster(r, v, cfg)) {
            reps.push(v.clone());
        }
    }
    reps
}
