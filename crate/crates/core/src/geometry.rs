//! Planar geometry helpers: vectors, polylines, oriented boxes.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2 { x: a[0], y: a[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Rotate into a frame whose x axis points along `yaw`.
    pub fn to_local(self, yaw: f64) -> Vec2 {
        let (s, c) = yaw.sin_cos();
        Vec2::new(c * self.x + s * self.y, -s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Closest point on segment `ab` to `p`, with the segment parameter in [0, 1].
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn point_segment_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    closest_on_segment(p, a, b).0.dist(p)
}

/// Proper or touching intersection of segments `ab` and `cd`.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

pub fn segment_segment_dist(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length from the polyline start to the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub point: Vec2,
    pub segment: usize,
    pub heading: f64,
}

pub fn project_onto(pts: &[Vec2], p: Vec2) -> Projection {
    let mut best = Projection {
        s: 0.0,
        lateral: f64::INFINITY,
        point: pts[0],
        segment: 0,
        heading: 0.0,
    };
    let mut best_d2 = f64::INFINITY;
    let mut acc = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let (q, t) = closest_on_segment(p, w[0], w[1]);
        let d2 = (p - q).norm_sq();
        let seg_len = w[0].dist(w[1]);
        if d2 < best_d2 {
            best_d2 = d2;
            let dir = w[1] - w[0];
            let side = dir.cross(p - w[0]);
            let d = d2.sqrt();
            best = Projection {
                s: acc + t * seg_len,
                lateral: if side >= 0.0 { d } else { -d },
                point: q,
                segment: i,
                heading: dir.angle(),
            };
        }
        acc += seg_len;
    }
    best
}

/// Point at arc length `s` (clamped to the polyline extent).
pub fn point_at(pts: &[Vec2], s: f64) -> Vec2 {
    let mut remaining = s.max(0.0);
    for w in pts.windows(2) {
        let len = w[0].dist(w[1]);
        if remaining <= len {
            if len == 0.0 {
                return w[0];
            }
            return w[0] + (w[1] - w[0]) * (remaining / len);
        }
        remaining -= len;
    }
    *pts.last().expect("non-empty polyline")
}

/// Resample at uniform arc-length spacing, always keeping both endpoints.
pub fn resample(pts: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let total = polyline_length(pts);
    if pts.len() < 2 || total == 0.0 {
        return pts.to_vec();
    }
    let n = (total / spacing).ceil().max(1.0) as usize;
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(pts[0]);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..n {
        let target = step * k as f64;
        loop {
            let len = pts[seg].dist(pts[seg + 1]);
            if seg_start + len >= target || seg + 2 >= pts.len() {
                let t = if len > 0.0 { (target - seg_start) / len } else { 0.0 };
                out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * t.clamp(0.0, 1.0));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(*pts.last().unwrap());
    out
}

/// Offset a polyline sideways by `d` (positive = left). Uses per-vertex averaged normals.
pub fn offset_polyline(pts: &[Vec2], d: f64) -> Vec<Vec2> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let dir = if i == 0 {
                pts[1] - pts[0]
            } else if i == n - 1 {
                pts[n - 1] - pts[n - 2]
            } else {
                (pts[i] - pts[i - 1]).normalized() + (pts[i + 1] - pts[i]).normalized()
            };
            pts[i] + dir.normalized().perp() * d
        })
        .collect()
}

pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Absolute shoelace area of a closed polygon.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    twice.abs() * 0.5
}

/// Yaw-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, yaw: f64, length: f64, width: f64) -> Self {
        Obb { center, yaw, half_length: length * 0.5, half_width: width * 0.5 }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.yaw) * self.half_length;
        let l = Vec2::from_angle(self.yaw).perp() * self.half_width;
        let c = self.center;
        [c + f + l, c + f - l, c - f - l, c - f + l]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = [
            Vec2::from_angle(self.yaw),
            Vec2::from_angle(self.yaw).perp(),
            Vec2::from_angle(other.yaw),
            Vec2::from_angle(other.yaw).perp(),
        ];
        for ax in axes {
            let (amin, amax) = extent(&a, ax);
            let (bmin, bmax) = extent(&b, ax);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    pub fn overlaps_disc(&self, center: Vec2, radius: f64) -> bool {
        let local = (center - self.center).to_local(self.yaw);
        let cx = local.x.clamp(-self.half_length, self.half_length);
        let cy = local.y.clamp(-self.half_width, self.half_width);
        let dx = local.x - cx;
        let dy = local.y - cy;
        dx * dx + dy * dy <= radius * radius
    }
}

fn extent(pts: &[Vec2; 4], ax: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        let d = p.dot(ax);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Circle through three points; `None` when they are collinear.
pub fn circumradius(a: Vec2, b: Vec2, c: Vec2) -> Option<f64> {
    let ab = a.dist(b);
    let bc = b.dist(c);
    let ca = c.dist(a);
    let area2 = (b - a).cross(c - a).abs();
    if area2 < 1e-12 * (ab * bc * ca).max(1e-300) || area2 == 0.0 {
        return None;
    }
    Some(ab * bc * ca / (2.0 * area2))
}
