//! Logistic-regression safe/unsafe classifier over road features.

use crate::error::{Error, Result};
use crate::features::{RoadFeatures, ROAD_FEATURE_COUNT};
use serde::{Deserialize, Serialize};

const N: usize = ROAD_FEATURE_COUNT;

/// Per-feature mean and scale used to z-normalize inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub mean: [f64; N],
    pub std: [f64; N],
}

impl Default for FeatureNorms {
    fn default() -> Self {
        FeatureNorms { mean: [0.0; N], std: [1.0; N] }
    }
}

impl FeatureNorms {
    pub fn fit(rows: &[[f64; N]]) -> Self {
        let mut out = FeatureNorms::default();
        if rows.is_empty() {
            return out;
        }
        let n = rows.len() as f64;
        for j in 0..N {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            out.mean[j] = m;
            out.std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn apply(&self, x: &[f64; N]) -> [f64; N] {
        std::array::from_fn(|j| (x[j] - self.mean[j]) / self.std[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: [f64; N],
    pub bias: f64,
    pub norms: FeatureNorms,
}

impl Default for LrModel {
    fn default() -> Self {
        LrModel { weights: [0.0; N], bias: 0.0, norms: FeatureNorms::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { l2: 1e-3, tolerance: 1e-6, max_iterations: 10_000, initial_step: 1.0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss plus `l2/2 · ‖w‖²` over normalized rows. The bias is
/// not regularized.
pub fn objective(w: &[f64; N], b: f64, z: &[[f64; N]], y: &[f64], l2: f64) -> f64 {
    let n = z.len() as f64;
    let data: f64 = z
        .iter()
        .zip(y)
        .map(|(x, t)| {
            let s = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            softplus(s) - t * s
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn gradient(w: &[f64; N], b: f64, z: &[[f64; N]], y: &[f64], l2: f64) -> ([f64; N], f64) {
    let n = z.len() as f64;
    let mut gw = [0.0; N];
    let mut gb = 0.0;
    for (x, t) in z.iter().zip(y) {
        let s = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        let r = sigmoid(s) - t;
        gb += r;
        for j in 0..N {
            gw[j] += r * x[j];
        }
    }
    for j in 0..N {
        gw[j] = gw[j] / n + l2 * w[j];
    }
    (gw, gb / n)
}

impl LrModel {
    pub fn predict_unsafe(&self, f: &RoadFeatures) -> f64 {
        self.predict_row(&f.to_array())
    }

    pub fn predict_row(&self, x: &[f64; N]) -> f64 {
        let z = self.norms.apply(x);
        let s = self.bias + self.weights.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        sigmoid(s).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    /// Regularized training objective of this model on `rows`.
    pub fn loss(&self, rows: &[([f64; N], f64)], l2: f64) -> f64 {
        let z: Vec<[f64; N]> = rows.iter().map(|(x, _)| self.norms.apply(x)).collect();
        let y: Vec<f64> = rows.iter().map(|(_, t)| *t).collect();
        objective(&self.weights, self.bias, &z, &y, l2)
    }
}

pub fn train_lr(rows: &[(RoadFeatures, f64)], cfg: &LrConfig) -> Result<LrModel> {
    let raw: Vec<([f64; N], f64)> = rows.iter().map(|(f, y)| (f.to_array(), *y)).collect();
    train_lr_rows(&raw, cfg)
}

/// Gradient descent with backtracking line search on the convex objective.
/// Deterministic: the result depends only on the multiset of rows up to
/// floating-point summation order.
pub fn train_lr_rows(rows: &[([f64; N], f64)], cfg: &LrConfig) -> Result<LrModel> {
    if !(cfg.l2 >= 0.0) || !cfg.l2.is_finite() {
        return Err(Error::Config("l2 must be a finite value ≥ 0".into()));
    }
    if rows.iter().any(|(x, y)| (*y != 0.0 && *y != 1.0) || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("rows need finite features and 0/1 labels".into()));
    }
    let pos = rows.iter().filter(|(_, y)| *y == 1.0).count();
    if pos == 0 || pos == rows.len() {
        return Err(Error::Training("training rows must contain both labels".into()));
    }
    let xs: Vec<[f64; N]> = rows.iter().map(|(x, _)| *x).collect();
    let norms = FeatureNorms::fit(&xs);
    let z: Vec<[f64; N]> = xs.iter().map(|x| norms.apply(x)).collect();
    let y: Vec<f64> = rows.iter().map(|(_, t)| *t).collect();

    let mut w = [0.0; N];
    let mut b = 0.0;
    let mut f = objective(&w, b, &z, &y, cfg.l2);
    let mut step = cfg.initial_step;
    for _ in 0..cfg.max_iterations {
        let (gw, gb) = gradient(&w, b, &z, &y, cfg.l2);
        let gnorm2 = gw.iter().map(|v| v * v).sum::<f64>() + gb * gb;
        if gnorm2.sqrt() <= cfg.tolerance {
            break;
        }
        // Armijo backtracking.
        let mut accepted = false;
        for _ in 0..60 {
            let nw: [f64; N] = std::array::from_fn(|j| w[j] - step * gw[j]);
            let nb = b - step * gb;
            let nf = objective(&nw, nb, &z, &y, cfg.l2);
            if nf <= f - 0.5 * step * gnorm2 {
                w = nw;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    Ok(LrModel { weights: w, bias: b, norms })
}
