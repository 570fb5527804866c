//! Model inputs: the normalized temporal tensor for the violation predictor
//! and static road attributes of the ego route for the road classifier.

use crate::error::{Error, Result};
use crate::feedback::{SceneRecord, Trace, SIGNALS};
use crate::geometry::{circumradius, normalize_angle, polygon_area, polyline_length, resample, Vec2};
use serde::{Deserialize, Serialize};

/// Per-channel mean and standard deviation of the seven vehicle signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; SIGNALS],
    pub std: [f64; SIGNALS],
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { mean: [0.0; SIGNALS], std: [1.0; SIGNALS] }
    }
}

impl NormStats {
    /// Statistics over every vehicle of every scene of `traces`. Channels with
    /// zero spread get unit scale.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a SceneRecord>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; SIGNALS];
        let mut sq = [0.0; SIGNALS];
        for s in scenes {
            for chunk in s.values.chunks_exact(SIGNALS) {
                n += 1;
                for c in 0..SIGNALS {
                    sum[c] += chunk[c];
                    sq[c] += chunk[c] * chunk[c];
                }
            }
        }
        if n == 0 {
            return NormStats::default();
        }
        let mut out = NormStats::default();
        for c in 0..SIGNALS {
            let m = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - m * m).max(0.0);
            out.mean[c] = m;
            out.std[c] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Self {
        Self::from_scenes(traces.into_iter().flat_map(|t| t.scenes.iter()))
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TensorConfig {
    pub t_fixed: usize,
    pub max_vehicles: usize,
}

impl Default for TensorConfig {
    fn default() -> Self {
        TensorConfig { t_fixed: 240, max_vehicles: 3 }
    }
}

impl TensorConfig {
    pub fn n_info(&self) -> usize {
        SIGNALS * self.max_vehicles
    }
}

/// `t_fixed × n_info` row-major values with a validity mask per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTensor {
    pub t_fixed: usize,
    pub n_info: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Vehicles present in the source trace.
    pub m: usize,
}

impl TemporalTensor {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_info..(t + 1) * self.n_info]
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Indices of at most `k` evenly spaced elements of `0..n`, keeping both ends.
pub fn subsample_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    if k == 1 {
        return vec![0];
    }
    (0..k).map(|i| (i * (n - 1) + (k - 1) / 2) / (k - 1)).collect()
}

pub fn temporal_tensor(trace: &Trace, cfg: &TensorConfig, norms: &NormStats) -> Result<TemporalTensor> {
    temporal_tensor_of(&trace.scenes, cfg, norms)
}

pub fn temporal_tensor_of(scenes: &[SceneRecord], cfg: &TensorConfig, norms: &NormStats) -> Result<TemporalTensor> {
    if scenes.is_empty() {
        return Err(Error::Feature("empty trace".into()));
    }
    if cfg.t_fixed == 0 || cfg.max_vehicles == 0 {
        return Err(Error::Feature("tensor dimensions must be positive".into()));
    }
    let m = scenes[0].vehicle_count();
    if m > cfg.max_vehicles {
        return Err(Error::Feature(format!("{m} vehicles exceed the configured maximum of {}", cfg.max_vehicles)));
    }
    let n_info = cfg.n_info();
    let mut values = vec![0.0; cfg.t_fixed * n_info];
    let mut mask = vec![false; cfg.t_fixed];
    for (row, &src) in subsample_indices(scenes.len(), cfg.t_fixed).iter().enumerate() {
        let rec = &scenes[src];
        if rec.vehicle_count() != m {
            return Err(Error::Feature(format!("scene {src} has {} vehicles, expected {m}", rec.vehicle_count())));
        }
        for (k, x) in rec.values.iter().enumerate() {
            values[row * n_info + k] = norms.apply(k % SIGNALS, *x);
        }
        mask[row] = true;
    }
    Ok(TemporalTensor { t_fixed: cfg.t_fixed, n_info, values, mask, m })
}

pub const ROAD_FEATURE_COUNT: usize = 18;

pub const ROAD_FEATURE_NAMES: [&str; ROAD_FEATURE_COUNT] = [
    "direct_distance",
    "length",
    "num_l_turns",
    "num_r_turns",
    "num_straight",
    "total_angle",
    "median_angle",
    "std_angle",
    "max_angle",
    "min_angle",
    "mean_angle",
    "median_radius",
    "std_radius",
    "max_radius",
    "min_radius",
    "mean_radius",
    "full_road_diversity",
    "mean_road_diversity",
];

/// Static geometric attributes of a driving path. Angles in degrees, lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadFeatures {
    pub direct_distance: f64,
    pub length: f64,
    pub num_l_turns: f64,
    pub num_r_turns: f64,
    pub num_straight: f64,
    pub total_angle: f64,
    pub median_angle: f64,
    pub std_angle: f64,
    pub max_angle: f64,
    pub min_angle: f64,
    pub mean_angle: f64,
    pub median_radius: f64,
    pub std_radius: f64,
    pub max_radius: f64,
    pub min_radius: f64,
    pub mean_radius: f64,
    pub full_road_diversity: f64,
    pub mean_road_diversity: f64,
}

impl RoadFeatures {
    pub fn to_array(&self) -> [f64; ROAD_FEATURE_COUNT] {
        [
            self.direct_distance,
            self.length,
            self.num_l_turns,
            self.num_r_turns,
            self.num_straight,
            self.total_angle,
            self.median_angle,
            self.std_angle,
            self.max_angle,
            self.min_angle,
            self.mean_angle,
            self.median_radius,
            self.std_radius,
            self.max_radius,
            self.min_radius,
            self.mean_radius,
            self.full_road_diversity,
            self.mean_road_diversity,
        ]
    }

    pub fn from_array(a: [f64; ROAD_FEATURE_COUNT]) -> Self {
        RoadFeatures {
            direct_distance: a[0],
            length: a[1],
            num_l_turns: a[2],
            num_r_turns: a[3],
            num_straight: a[4],
            total_angle: a[5],
            median_angle: a[6],
            std_angle: a[7],
            max_angle: a[8],
            min_angle: a[9],
            mean_angle: a[10],
            median_radius: a[11],
            std_radius: a[12],
            max_radius: a[13],
            min_radius: a[14],
            mean_radius: a[15],
            full_road_diversity: a[16],
            mean_road_diversity: a[17],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadFeatureConfig {
    /// Resampling step along the path (m).
    pub spacing: f64,
    /// Half-width, in resampled points, of the window used to classify a point.
    pub window: usize,
    /// Windowed heading change below which a point is straight (deg).
    pub straight_threshold_deg: f64,
}

impl Default for RoadFeatureConfig {
    fn default() -> Self {
        RoadFeatureConfig { spacing: 0.5, window: 5, straight_threshold_deg: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegKind {
    Straight,
    Left,
    Right,
}

struct Stats {
    median: f64,
    std: f64,
    max: f64,
    min: f64,
    mean: f64,
}

fn stats(xs: &[f64]) -> Stats {
    if xs.is_empty() {
        return Stats { median: 0.0, std: 0.0, max: 0.0, min: 0.0, mean: 0.0 };
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    Stats { median, std: var.sqrt(), max: v[n - 1], min: v[0], mean }
}

pub fn road_features(points: &[Vec2]) -> Result<RoadFeatures> {
    road_features_with(points, &RoadFeatureConfig::default())
}

/// Segment the path into maximal straight / left / right runs and summarize them.
pub fn road_features_with(points: &[Vec2], cfg: &RoadFeatureConfig) -> Result<RoadFeatures> {
    if points.len() < 2 || points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Feature("route needs at least two finite points".into()));
    }
    let length = polyline_length(points);
    if length <= 0.0 {
        return Err(Error::Feature("route has zero length".into()));
    }
    let direct_distance = points[0].dist(*points.last().unwrap());
    let pts = resample(points, cfg.spacing);
    let n = pts.len();

    // Signed turn at each interior vertex.
    let mut turn = vec![0.0; n];
    for i in 1..n - 1 {
        turn[i] = normalize_angle((pts[i + 1] - pts[i]).angle() - (pts[i] - pts[i - 1]).angle());
    }
    let threshold = cfg.straight_threshold_deg.to_radians();
    let kinds: Vec<SegKind> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(cfg.window);
            let hi = (i + cfg.window).min(n - 1);
            let sum: f64 = turn[lo..=hi].iter().sum();
            if sum.abs() < threshold {
                SegKind::Straight
            } else if sum > 0.0 {
                SegKind::Left
            } else {
                SegKind::Right
            }
        })
        .collect();

    let mut segments: Vec<(SegKind, usize, usize)> = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        match segments.last_mut() {
            Some((kind, _, end)) if kind == k => *end = i,
            _ => segments.push((*k, i, i)),
        }
    }

    let mut f = RoadFeatures { direct_distance, length, ..Default::default() };
    let mut angles = Vec::new();
    let mut radii = Vec::new();
    let mut diversity = Vec::new();
    for &(kind, a, b) in &segments {
        // Include the vertex shared with the next segment so the polyline is contiguous.
        let b_ext = (b + 1).min(n - 1);
        let seg = &pts[a..=b_ext];
        let angle: f64 = turn[a..=b].iter().sum::<f64>().to_degrees();
        f.total_angle += angle.abs();
        let chord_poly: Vec<Vec2> = seg.to_vec();
        diversity.push(if seg.len() >= 3 { polygon_area(&chord_poly) } else { 0.0 });
        match kind {
            SegKind::Straight => f.num_straight += 1.0,
            SegKind::Left | SegKind::Right => {
                if kind == SegKind::Left {
                    f.num_l_turns += 1.0;
                } else {
                    f.num_r_turns += 1.0;
                }
                angles.push(angle.abs());
                let mid = seg[seg.len() / 2];
                if let Some(r) = circumradius(seg[0], mid, *seg.last().unwrap()) {
                    radii.push(r);
                }
            }
        }
    }
    let sa = stats(&angles);
    let sr = stats(&radii);
    f.median_angle = sa.median;
    f.std_angle = sa.std;
    f.max_angle = sa.max;
    f.min_angle = sa.min;
    f.mean_angle = sa.mean;
    f.median_radius = sr.median;
    f.std_radius = sr.std;
    f.max_radius = sr.max;
    f.min_radius = sr.min;
    f.mean_radius = sr.mean;
    f.full_road_diversity = diversity.iter().sum();
    f.mean_road_diversity = f.full_road_diversity / diversity.len() as f64;
    Ok(f)
}
