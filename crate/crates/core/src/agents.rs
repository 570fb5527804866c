//! Agent-under-test interface and the bundled reference drivers.
//!
//! All bundled agents share one longitudinal controller (an intelligent-driver
//! style car follower over the route corridor) and pure-pursuit steering. Each
//! defective profile changes exactly one behaviour of the cautious driver.

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Vec2};
use crate::map::LightColor;
use crate::sim::{ActorKind, ActorState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

impl Control {
    pub fn idle() -> Self {
        Control::default()
    }

    pub fn full_brake() -> Self {
        Control { throttle: 0.0, brake: 1.0, steer: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && (-1.0..=1.0).contains(&self.steer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleActor {
    pub id: usize,
    pub state: ActorState,
    pub range: f64,
    /// Relative to the ego heading, in (-π, π].
    pub bearing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightObservation {
    pub color: LightColor,
    /// Distance along the lane to its stop line (m).
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u32,
    pub ego: ActorState,
    pub visible: Vec<VisibleActor>,
    /// Upcoming route waypoints in world coordinates.
    pub waypoints: Vec<Vec2>,
    /// True when `waypoints` ends at the route destination.
    pub route_ends: bool,
    pub light: Option<LightObservation>,
    pub speed_limit: f64,
}

/// An agent under test. Implementations may keep state but must be a
/// deterministic function of the observations seen so far.
pub trait Agent: Send {
    fn name(&self) -> String;
    fn decide(&mut self, obs: &Observation) -> std::result::Result<Control, String>;
}

pub const PROFILES: [&str; 5] = ["cautious", "blindspot", "late_brake", "greedy_lanechange", "light_misjudge"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    None,
    Blindspot,
    LateBrake,
    GreedyLaneChange,
    LightMisjudge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverParams {
    pub speed_ratio: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub comfort_accel: f64,
    pub comfort_decel: f64,
    pub lateral_accel: f64,
    pub corridor_half_width: f64,
    pub prediction_horizon: f64,
    pub blind_angle_deg: f64,
    pub brake_delay_ticks: u32,
    pub lane_change_offset: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub wheelbase: f64,
    pub max_steer_rad: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            speed_ratio: 0.9,
            time_headway: 1.5,
            min_gap: 3.0,
            comfort_accel: 2.0,
            comfort_decel: 3.0,
            lateral_accel: 2.0,
            corridor_half_width: 1.6,
            prediction_horizon: 3.0,
            blind_angle_deg: 60.0,
            brake_delay_ticks: 10,
            lane_change_offset: 3.5,
            max_accel: 4.0,
            max_brake: 8.0,
            wheelbase: 2.8,
            max_steer_rad: 35f64.to_radians(),
        }
    }
}

impl DriverParams {
    fn set(&mut self, key: &str, v: f64) -> Result<()> {
        let slot = match key {
            "speed_ratio" => &mut self.speed_ratio,
            "time_headway" => &mut self.time_headway,
            "min_gap" => &mut self.min_gap,
            "comfort_accel" => &mut self.comfort_accel,
            "comfort_decel" => &mut self.comfort_decel,
            "lateral_accel" => &mut self.lateral_accel,
            "corridor_half_width" => &mut self.corridor_half_width,
            "prediction_horizon" => &mut self.prediction_horizon,
            "blind_angle_deg" => &mut self.blind_angle_deg,
            "lane_change_offset" => &mut self.lane_change_offset,
            "brake_delay_ticks" => {
                if !(v >= 0.0 && v.fract() == 0.0) {
                    return Err(Error::Config("brake_delay_ticks must be a non-negative integer".into()));
                }
                self.brake_delay_ticks = v as u32;
                return Ok(());
            }
            other => return Err(Error::Config(format!("unknown agent parameter `{other}`"))),
        };
        if !v.is_finite() {
            return Err(Error::Config(format!("agent parameter `{key}` must be finite")));
        }
        *slot = v;
        Ok(())
    }
}

/// Reference driver with an optional seeded defect.
#[derive(Debug, Clone)]
pub struct ReferenceAgent {
    profile: &'static str,
    defect: Defect,
    p: DriverParams,
    // late_brake
    brake_wanted_for: u32,
    held_throttle: f64,
    // greedy_lanechange
    overtaking: bool,
    overtake_ticks: u32,
    // light_misjudge
    frozen: bool,
}

pub fn make_reference_agent(profile: &str, params: &BTreeMap<String, f64>) -> Result<ReferenceAgent> {
    let (name, defect) = match profile {
        "cautious" => ("cautious", Defect::None),
        "blindspot" => ("blindspot", Defect::Blindspot),
        "late_brake" => ("late_brake", Defect::LateBrake),
        "greedy_lanechange" => ("greedy_lanechange", Defect::GreedyLaneChange),
        "light_misjudge" => ("light_misjudge", Defect::LightMisjudge),
        other => return Err(Error::Config(format!("unknown agent profile `{other}`"))),
    };
    let mut p = DriverParams::default();
    for (k, &v) in params {
        p.set(k, v)?;
    }
    Ok(ReferenceAgent {
        profile: name,
        defect,
        p,
        brake_wanted_for: 0,
        held_throttle: 0.0,
        overtaking: false,
        overtake_ticks: 0,
        frozen: false,
    })
}

/// Anything that can stand behind `--agent`: a bundled profile or `process:<command>`.
pub fn make_agent(spec: &str, params: &BTreeMap<String, f64>) -> Result<Box<dyn Agent>> {
    if let Some(cmd) = spec.strip_prefix("process:") {
        return Ok(Box::new(ProcessAgent::spawn(cmd)?));
    }
    Ok(Box::new(make_reference_agent(spec, params)?))
}

struct Threat {
    gap: f64,
    speed: f64,
    vehicle_ahead: bool,
}

fn half_extent(kind: ActorKind) -> (f64, f64) {
    match kind {
        ActorKind::Pedestrian => (0.4, 0.4),
        _ => (2.25, 1.0),
    }
}

/// Polyline in ego-local coordinates with cumulative arc length.
struct LocalPath {
    pts: Vec<Vec2>,
    s: Vec<f64>,
}

impl LocalPath {
    fn new(obs: &Observation, lateral_offset: f64) -> LocalPath {
        let origin = obs.ego.position;
        let yaw = obs.ego.yaw;
        let mut pts = vec![Vec2::ZERO];
        let wps: Vec<Vec2> = obs.waypoints.iter().map(|w| (*w - origin).to_local(yaw)).collect();
        for (i, w) in wps.iter().enumerate() {
            let mut p = *w;
            if lateral_offset != 0.0 {
                let prev = if i == 0 { Vec2::ZERO } else { wps[i - 1] };
                let dir = (*w - prev).normalized();
                p = p + dir.perp() * lateral_offset;
            }
            if pts.last().unwrap().dist(p) > 1e-6 {
                pts.push(p);
            }
        }
        let mut s = vec![0.0];
        for w in pts.windows(2) {
            s.push(s.last().unwrap() + w[0].dist(w[1]));
        }
        LocalPath { pts, s }
    }

    fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// (arc length, |lateral|) of the closest path point, or None if the path is empty.
    fn locate(&self, p: Vec2) -> Option<(f64, f64)> {
        if self.pts.len() < 2 {
            return None;
        }
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.pts.windows(2).enumerate() {
            let (q, t) = crate::geometry::closest_on_segment(p, w[0], w[1]);
            let d = q.dist(p);
            if d < best.0 {
                best = (d, self.s[i] + t * (self.s[i + 1] - self.s[i]));
            }
        }
        // Points behind the ego project onto the path origin.
        if best.1 <= 0.0 && p.x < 0.0 {
            return Some((p.x, best.0));
        }
        Some((best.1, best.0))
    }

    fn max_curvature(&self, within: f64) -> f64 {
        let mut k: f64 = 0.0;
        for i in 1..self.pts.len().saturating_sub(1) {
            if self.s[i] > within {
                break;
            }
            let a = (self.pts[i] - self.pts[i - 1]).angle();
            let b = (self.pts[i + 1] - self.pts[i]).angle();
            let seg = (self.s[i + 1] - self.s[i - 1]) * 0.5;
            if seg > 0.3 {
                k = k.max(normalize_angle(b - a).abs() / seg);
            }
        }
        k
    }

    fn pursuit_target(&self, lookahead: f64) -> Vec2 {
        for (i, &s) in self.s.iter().enumerate() {
            if s >= lookahead {
                return self.pts[i];
            }
        }
        *self.pts.last().unwrap()
    }
}

impl ReferenceAgent {
    pub fn profile(&self) -> &'static str {
        self.profile
    }

    pub fn params(&self) -> &DriverParams {
        &self.p
    }

    fn idm(&self, v: f64, v0: f64, threat: Option<&Threat>) -> f64 {
        let p = &self.p;
        let free = (v / v0.max(0.01)).powi(4);
        match threat {
            None => p.comfort_accel * (1.0 - free),
            Some(t) => {
                if t.gap <= 0.1 {
                    return -p.max_brake;
                }
                let dv = v - t.speed;
                let s_star = p.min_gap
                    + (v * p.time_headway + v * dv / (2.0 * (p.comfort_accel * p.comfort_decel).sqrt()))
                        .max(0.0);
                p.comfort_accel * (1.0 - free - (s_star / t.gap).powi(2))
            }
        }
    }

    fn threats(&self, obs: &Observation, path: &LocalPath, v: f64) -> Vec<Threat> {
        let p = &self.p;
        let mut out = Vec::new();
        let blind = p.blind_angle_deg.to_radians();
        for a in &obs.visible {
            if self.defect == Defect::Blindspot && a.bearing.abs() > blind {
                continue;
            }
            let (hl, hw) = half_extent(a.state.kind);
            let rel = (a.state.position - obs.ego.position).to_local(obs.ego.yaw);
            let vel = a.state.velocity.to_local(obs.ego.yaw);
            let steps = (p.prediction_horizon / 0.5).round() as usize;
            for k in 0..=steps {
                let tau = k as f64 * 0.5;
                let q = rel + vel * tau;
                let Some((s, lat)) = path.locate(q) else { continue };
                if s <= 0.0 || lat > p.corridor_half_width + hw {
                    continue;
                }
                if tau > 0.0 && s > v * (tau + 1.5) + 6.0 {
                    continue;
                }
                if tau > 0.0 && (s + 2.25 + hl + 1.0) / v.max(0.1) < tau - 0.5 {
                    continue;
                }
                let gap = s - 2.25 - hl;
                if tau > 0.0 && gap < 1.0 {
                    continue;
                }
                let along = if k == 0 {
                    let i = path.s.iter().position(|&x| x >= s).unwrap_or(path.pts.len() - 1).max(1);
                    let dir = (path.pts[i] - path.pts[i - 1]).normalized();
                    vel.dot(dir).max(0.0)
                } else {
                    0.0
                };
                out.push(Threat {
                    gap,
                    speed: along,
                    vehicle_ahead: k == 0 && a.state.kind != ActorKind::Pedestrian,
                });
                break;
            }
        }
        out
    }

    fn drive(&mut self, obs: &Observation) -> Control {
        let p = self.p;
        let v = obs.ego.speed;
        if self.frozen {
            return Control::full_brake();
        }
        let offset = if self.overtaking { p.lane_change_offset } else { 0.0 };
        let path = LocalPath::new(obs, offset);
        if path.pts.len() < 2 {
            return Control::full_brake();
        }
        let kappa = path.max_curvature(v * 2.0 + 12.0);
        let v_curve = if kappa > 1e-6 { (p.lateral_accel / kappa).sqrt().max(3.0) } else { f64::INFINITY };
        let v0 = (obs.speed_limit * p.speed_ratio).min(v_curve);

        let mut threats = self.threats(obs, &path, v);

        if self.defect == Defect::GreedyLaneChange {
            let base = LocalPath::new(obs, 0.0);
            let blockers = self.threats(obs, &base, v);
            let slow_lead = blockers
                .iter()
                .any(|t| t.vehicle_ahead && t.gap < 25.0 && t.speed < 0.7 * v0.max(1.0));
            if !self.overtaking && slow_lead {
                self.overtaking = true;
                self.overtake_ticks = 0;
            } else if self.overtaking {
                self.overtake_ticks += 1;
                let still_beside = blockers.iter().any(|t| t.vehicle_ahead && t.gap < 8.0);
                if (!still_beside && self.overtake_ticks > 60) || self.overtake_ticks > 300 {
                    self.overtaking = false;
                }
            }
            if self.overtaking {
                let path = LocalPath::new(obs, p.lane_change_offset);
                threats = self.threats(obs, &path, v);
            }
        }

        if let Some(light) = obs.light {
            let stop_gap = light.distance - 2.25 - 1.0;
            let stop = match light.color {
                LightColor::Red => true,
                LightColor::Yellow => {
                    if self.defect == Defect::LightMisjudge && light.distance < 40.0 {
                        self.frozen = true;
                        return Control::full_brake();
                    }
                    v * v / (2.0 * p.comfort_decel) < stop_gap
                }
                LightColor::Green => false,
            };
            if stop && stop_gap > -1.0 {
                threats.push(Threat { gap: stop_gap.max(0.11), speed: 0.0, vehicle_ahead: false });
            }
        }
        if obs.route_ends {
            threats.push(Threat { gap: path.length() + 2.0, speed: 0.0, vehicle_ahead: false });
        }

        let accel = threats
            .iter()
            .map(|t| self.idm(v, v0, Some(t)))
            .fold(self.idm(v, v0, None), f64::min);

        let lookahead = (0.5 * v + 2.5).clamp(3.0, 10.0);
        let target = path.pursuit_target(lookahead);
        let d2 = target.norm_sq().max(1e-6);
        let curvature = 2.0 * target.y / d2;
        let delta = (p.wheelbase * curvature).atan();
        let steer = (delta / p.max_steer_rad).clamp(-1.0, 1.0);

        if accel >= 0.0 {
            Control { throttle: (accel / p.max_accel).clamp(0.0, 1.0), brake: 0.0, steer }
        } else {
            Control { throttle: 0.0, brake: (-accel / p.max_brake).clamp(0.0, 1.0), steer }
        }
    }
}

impl Agent for ReferenceAgent {
    fn name(&self) -> String {
        self.profile.to_string()
    }

    fn decide(&mut self, obs: &Observation) -> std::result::Result<Control, String> {
        let c = self.drive(obs);
        if self.defect != Defect::LateBrake {
            return Ok(c);
        }
        if c.brake > 0.0 {
            self.brake_wanted_for += 1;
            if self.brake_wanted_for > self.p.brake_delay_ticks {
                return Ok(c);
            }
            Ok(Control { throttle: self.held_throttle, brake: 0.0, steer: c.steer })
        } else {
            self.brake_wanted_for = 0;
            self.held_throttle = c.throttle;
            Ok(c)
        }
    }
}

/// Agent living in another process, speaking line-delimited JSON: one
/// `Observation` per line on its stdin, one `Control` per line on its stdout.
pub struct ProcessAgent {
    command: String,
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessAgent {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Agent(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessAgent { command: command.to_string(), child, stdin, stdout })
    }
}

/// Parse one control line from an external agent.
pub fn parse_control_line(line: &str) -> Result<Control> {
    let c: Control = serde_json::from_str(line.trim()).map_err(|e| Error::from_json("control", e))?;
    if !(c.throttle.is_finite() && c.brake.is_finite() && c.steer.is_finite()) || !c.is_valid() {
        return Err(Error::Validation(format!("control out of range: {c:?}")));
    }
    Ok(c)
}

impl Agent for ProcessAgent {
    fn name(&self) -> String {
        format!("process:{}", self.command)
    }

    fn decide(&mut self, obs: &Observation) -> std::result::Result<Control, String> {
        let line = serde_json::to_string(obs).map_err(|e| e.to_string())?;
        writeln!(self.stdin, "{line}").map_err(|e| format!("write to agent: {e}"))?;
        self.stdin.flush().map_err(|e| format!("flush agent stdin: {e}"))?;
        let mut reply = String::new();
        let n = self.stdout.read_line(&mut reply).map_err(|e| format!("read from agent: {e}"))?;
        if n == 0 {
            return Err("agent closed its output".into());
        }
        parse_control_line(&reply).map_err(|e| e.to_string())
    }
}

impl Drop for ProcessAgent {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
