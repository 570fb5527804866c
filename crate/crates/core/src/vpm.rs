//! Violation prediction model: a small pre-norm Transformer encoder over the
//! temporal tensor, masked mean pooling and a single sigmoid output.
//!
//! Forward and backward passes are written out by hand and are generic over
//! the float type so the same code serves 32-bit training and 64-bit
//! finite-difference checks.

use crate::error::{Error, Result};
use crate::features::{temporal_tensor, NormStats, TemporalTensor, TensorConfig};
use crate::feedback::Trace;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

pub trait Scalar: Float + Send + Sync + std::fmt::Debug + 'static {}
impl<T: Float + Send + Sync + std::fmt::Debug + 'static> Scalar for T {}

fn c<F: Scalar>(x: f64) -> F {
    F::from(x).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpmConfig {
    pub n_info: usize,
    pub t_fixed: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Width of each attention head; `heads * head_dim` need not equal `d_model`.
    pub head_dim: usize,
    pub layers: usize,
    pub ff_mult: usize,
}

impl Default for VpmConfig {
    fn default() -> Self {
        VpmConfig { n_info: 21, t_fixed: 240, d_model: 128, heads: 3, head_dim: 43, layers: 3, ff_mult: 4 }
    }
}

impl VpmConfig {
    /// Default architecture sized to a tensor layout.
    pub fn for_tensor(t: &TensorConfig) -> Self {
        VpmConfig { n_info: t.n_info(), t_fixed: t.t_fixed, ..VpmConfig::default() }
    }

    /// Reduced architecture for desk-scale campaigns.
    pub fn compact(t: &TensorConfig) -> Self {
        VpmConfig { n_info: t.n_info(), t_fixed: t.t_fixed, d_model: 16, heads: 2, head_dim: 8, layers: 1, ff_mult: 2 }
    }

    pub fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn ff(&self) -> usize {
        self.ff_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_info, self.t_fixed, self.d_model, self.heads, self.head_dim, self.layers, self.ff_mult];
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerRanges {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

/// Offsets of every parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    w_in: Range<usize>,
    b_in: Range<usize>,
    pos: Range<usize>,
    layers: Vec<LayerRanges>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    w_head: Range<usize>,
    b_head: Range<usize>,
    total: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    Xavier(usize, usize),
    Small,
}

impl Layout {
    fn new(cfg: &VpmConfig) -> (Layout, Vec<(Range<usize>, Init)>) {
        let mut at = 0;
        let mut inits = Vec::new();
        let mut take = |n: usize, init: Init| {
            let r = at..at + n;
            at += n;
            inits.push((r.clone(), init));
            r
        };
        let (d, h, f) = (cfg.d_model, cfg.inner(), cfg.ff());
        let w_in = take(cfg.n_info * d, Init::Xavier(cfg.n_info, d));
        let b_in = take(d, Init::Zero);
        let pos = take(cfg.t_fixed * d, Init::Small);
        let layers = (0..cfg.layers)
            .map(|_| LayerRanges {
                ln1_g: take(d, Init::One),
                ln1_b: take(d, Init::Zero),
                wq: take(d * h, Init::Xavier(d, h)),
                bq: take(h, Init::Zero),
                wk: take(d * h, Init::Xavier(d, h)),
                bk: take(h, Init::Zero),
                wv: take(d * h, Init::Xavier(d, h)),
                bv: take(h, Init::Zero),
                wo: take(h * d, Init::Xavier(h, d)),
                bo: take(d, Init::Zero),
                ln2_g: take(d, Init::One),
                ln2_b: take(d, Init::Zero),
                w1: take(d * f, Init::Xavier(d, f)),
                b1: take(f, Init::Zero),
                w2: take(f * d, Init::Xavier(f, d)),
                b2: take(d, Init::Zero),
            })
            .collect();
        let lnf_g = take(d, Init::One);
        let lnf_b = take(d, Init::Zero);
        let w_head = take(d, Init::Xavier(d, 1));
        let b_head = take(1, Init::Zero);
        let layout = Layout { w_in, b_in, pos, layers, lnf_g, lnf_b, w_head, b_head, total: at };
        (layout, inits)
    }
}

/// Model parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VpmModel<F: Scalar = f32> {
    pub cfg: VpmConfig,
    pub params: Vec<F>,
    layout: Layout,
}

const LN_EPS: f64 = 1e-5;

// Row-major helpers. Shapes are given as (rows, inner, cols).

fn matmul<F: Scalar>(a: &[F], b: &[F], bias: Option<&[F]>, m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        if let Some(bias) = bias {
            row.copy_from_slice(bias);
        }
        for p in 0..k {
            let x = a[i * k + p];
            if x == F::zero() {
                continue;
            }
            for (o, w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + x * *w;
            }
        }
    }
    out
}

/// out (k×n) += aᵀ (k×m) · dy (m×n)
fn acc_at_b<F: Scalar>(a: &[F], dy: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == F::zero() {
                continue;
            }
            for (o, g) in out[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                *o = *o + x * *g;
            }
        }
    }
}

/// dy (m×n) · wᵀ (n×k)
fn mul_bt<F: Scalar>(dy: &[F], w: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * k];
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let wr = &w[p * n..(p + 1) * n];
            out[i * k + p] = dyr.iter().zip(wr).fold(F::zero(), |s, (a, b)| s + *a * *b);
        }
    }
    out
}

fn acc_rows<F: Scalar>(dy: &[F], out: &mut [F], n: usize) {
    for row in dy.chunks_exact(n) {
        for (o, g) in out.iter_mut().zip(row) {
            *o = *o + *g;
        }
    }
}

struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn layer_norm<F: Scalar>(x: &[F], g: &[F], b: &[F], d: usize) -> (Vec<F>, LnCache<F>) {
    let rows = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let nd = c::<F>(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().fold(F::zero(), |s, v| s + *v) / nd;
        let var = xr.iter().fold(F::zero(), |s, v| s + (*v - mean) * (*v - mean)) / nd;
        let rs = F::one() / (var + c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back<F: Scalar>(dy: &[F], cache: &LnCache<F>, g: &[F], dg: &mut [F], db: &mut [F], d: usize) -> Vec<F> {
    let rows = dy.len() / d;
    let mut dx = vec![F::zero(); dy.len()];
    let nd = c::<F>(d as f64);
    for r in 0..rows {
        let mut s1 = F::zero();
        let mut s2 = F::zero();
        for j in 0..d {
            let i = r * d + j;
            let dh = dy[i] * g[j];
            dg[j] = dg[j] + dy[i] * cache.xhat[i];
            db[j] = db[j] + dy[i];
            s1 = s1 + dh;
            s2 = s2 + dh * cache.xhat[i];
        }
        for j in 0..d {
            let i = r * d + j;
            let dh = dy[i] * g[j];
            dx[i] = cache.rstd[r] * (dh - s1 / nd - cache.xhat[i] * s2 / nd);
        }
    }
    dx
}

fn gelu<F: Scalar>(x: F) -> F {
    let k = c::<F>((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + c::<F>(0.044715) * x * x * x);
    c::<F>(0.5) * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let k = c::<F>((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + c::<F>(0.044715) * x * x * x);
    let t = u.tanh();
    let du = k * (F::one() + c::<F>(3.0 * 0.044715) * x * x);
    c::<F>(0.5) * (F::one() + t) + c::<F>(0.5) * x * (F::one() - t * t) * du
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of sigmoid(z) against label y, computed stably.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

struct LayerCache<F> {
    ln1: LnCache<F>,
    n1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    attn: Vec<F>,
    ln2: LnCache<F>,
    n2: Vec<F>,
    h1: Vec<F>,
    g: Vec<F>,
}

struct ForwardCache<F> {
    rows: Vec<usize>,
    input: Vec<F>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    pooled: Vec<F>,
    z: F,
}

impl<F: Scalar> VpmModel<F> {
    /// Randomly initialized model (Xavier-uniform weights, unit norms, zero biases).
    pub fn new(cfg: VpmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (layout, inits) = Layout::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![F::zero(); layout.total];
        for (r, init) in inits {
            for p in &mut params[r] {
                *p = match init {
                    Init::Zero => F::zero(),
                    Init::One => F::one(),
                    Init::Xavier(fi, fo) => {
                        let a = (6.0 / (fi + fo) as f64).sqrt();
                        c(rng.gen_range(-a..a))
                    }
                    Init::Small => c(rng.gen_range(-0.02..0.02)),
                };
            }
        }
        Ok(VpmModel { cfg, params, layout })
    }

    pub fn from_params(cfg: VpmConfig, params: Vec<F>) -> Result<Self> {
        cfg.validate()?;
        let (layout, _) = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::Incompatible(format!(
                "model expects {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("model parameters must be finite".into()));
        }
        Ok(VpmModel { cfg, params, layout })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Zero the prediction head so every output is exactly 0.5.
    pub fn zero_head(&mut self) {
        let l = &self.layout;
        for i in l.w_head.start..l.b_head.end {
            self.params[i] = F::zero();
        }
    }

    pub fn head_bias_index(&self) -> usize {
        self.layout.b_head.start
    }

    pub fn cast<G: Scalar>(&self) -> VpmModel<G> {
        VpmModel {
            cfg: self.cfg,
            params: self.params.iter().map(|p| G::from(*p).unwrap()).collect(),
            layout: self.layout.clone(),
        }
    }

    fn check(&self, x: &TemporalTensor) -> Result<()> {
        if x.t_fixed != self.cfg.t_fixed || x.n_info != self.cfg.n_info || x.values.len() != x.t_fixed * x.n_info {
            return Err(Error::Inference(format!(
                "input shape {}x{} does not match model {}x{}",
                x.t_fixed, x.n_info, self.cfg.t_fixed, self.cfg.n_info
            )));
        }
        if x.mask.len() != x.t_fixed || !x.mask.iter().any(|m| *m) {
            return Err(Error::Inference("input mask must mark at least one valid row".into()));
        }
        Ok(())
    }

    fn p(&self, r: &Range<usize>) -> &[F] {
        &self.params[r.clone()]
    }

    /// Only valid rows enter the computation: masked positions are excluded
    /// from attention keys and from pooling, so they cannot influence the output.
    fn forward(&self, x: &TemporalTensor) -> ForwardCache<F> {
        let cfg = &self.cfg;
        let l = &self.layout;
        let (d, h, f, hd) = (cfg.d_model, cfg.inner(), cfg.ff(), cfg.head_dim);
        let rows: Vec<usize> = (0..x.t_fixed).filter(|t| x.mask[*t]).collect();
        let n = rows.len();
        let input: Vec<F> = rows.iter().flat_map(|t| x.row(*t).iter().map(|v| c::<F>(*v))).collect();
        let mut cur = matmul(&input, self.p(&l.w_in), Some(self.p(&l.b_in)), n, cfg.n_info, d);
        let pos = self.p(&l.pos);
        for (i, t) in rows.iter().enumerate() {
            for j in 0..d {
                cur[i * d + j] = cur[i * d + j] + pos[t * d + j];
            }
        }
        let scale = c::<F>(1.0 / (hd as f64).sqrt());
        let mut layers = Vec::with_capacity(cfg.layers);
        for lr in &l.layers {
            let x_in = cur;
            let (n1, ln1) = layer_norm(&x_in, self.p(&lr.ln1_g), self.p(&lr.ln1_b), d);
            let q = matmul(&n1, self.p(&lr.wq), Some(self.p(&lr.bq)), n, d, h);
            let k = matmul(&n1, self.p(&lr.wk), Some(self.p(&lr.bk)), n, d, h);
            let v = matmul(&n1, self.p(&lr.wv), Some(self.p(&lr.bv)), n, d, h);
            let mut probs = vec![F::zero(); cfg.heads * n * n];
            let mut attn = vec![F::zero(); n * h];
            for hh in 0..cfg.heads {
                let off = hh * hd;
                for i in 0..n {
                    let pr = &mut probs[(hh * n + i) * n..(hh * n + i + 1) * n];
                    let qi = &q[i * h + off..i * h + off + hd];
                    let mut mx = F::neg_infinity();
                    for j in 0..n {
                        let kj = &k[j * h + off..j * h + off + hd];
                        let s = qi.iter().zip(kj).fold(F::zero(), |a, (x, y)| a + *x * *y) * scale;
                        pr[j] = s;
                        mx = mx.max(s);
                    }
                    let mut sum = F::zero();
                    for p in pr.iter_mut() {
                        *p = (*p - mx).exp();
                        sum = sum + *p;
                    }
                    for p in pr.iter_mut() {
                        *p = *p / sum;
                    }
                    let out = &mut attn[i * h + off..i * h + off + hd];
                    for j in 0..n {
                        let pj = pr[j];
                        for (o, vv) in out.iter_mut().zip(&v[j * h + off..j * h + off + hd]) {
                            *o = *o + pj * *vv;
                        }
                    }
                }
            }
            let o = matmul(&attn, self.p(&lr.wo), Some(self.p(&lr.bo)), n, h, d);
            let x_mid: Vec<F> = x_in.iter().zip(&o).map(|(a, b)| *a + *b).collect();
            let (n2, ln2) = layer_norm(&x_mid, self.p(&lr.ln2_g), self.p(&lr.ln2_b), d);
            let h1 = matmul(&n2, self.p(&lr.w1), Some(self.p(&lr.b1)), n, d, f);
            let g: Vec<F> = h1.iter().map(|v| gelu(*v)).collect();
            let ff = matmul(&g, self.p(&lr.w2), Some(self.p(&lr.b2)), n, f, d);
            cur = x_mid.iter().zip(&ff).map(|(a, b)| *a + *b).collect();
            layers.push(LayerCache { ln1, n1, q, k, v, probs, attn, ln2, n2, h1, g });
        }
        let (nf, lnf) = layer_norm(&cur, self.p(&l.lnf_g), self.p(&l.lnf_b), d);
        let mut pooled = vec![F::zero(); d];
        acc_rows(&nf, &mut pooled, d);
        let inv = c::<F>(1.0 / n as f64);
        for p in &mut pooled {
            *p = *p * inv;
        }
        let z = pooled.iter().zip(self.p(&l.w_head)).fold(self.params[l.b_head.start], |s, (a, b)| s + *a * *b);
        ForwardCache { rows, input, layers, lnf, pooled, z }
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, x: &TemporalTensor) -> Result<f64> {
        self.check(x)?;
        Ok(self.forward(x).z.to_f64().unwrap())
    }

    /// Violation probability in (0, 1).
    pub fn predict(&self, x: &TemporalTensor) -> Result<f64> {
        let p = sigmoid(self.logit(x)?);
        Ok(p.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
    }

    /// Accumulate d(loss)/d(params) for one sample into `grad`, scaled by
    /// `weight`. Returns the sample's BCE loss.
    fn backward_into(&self, x: &TemporalTensor, y: f64, weight: F, grad: &mut [F]) -> f64 {
        let cfg = &self.cfg;
        let l = &self.layout;
        let (d, h, f, hd) = (cfg.d_model, cfg.inner(), cfg.ff(), cfg.head_dim);
        let cache = self.forward(x);
        let n = cache.rows.len();
        let zf = cache.z.to_f64().unwrap();
        let loss = bce_logit(zf, y);
        let dz = c::<F>(sigmoid(zf) - y) * weight;

        grad[l.b_head.start] = grad[l.b_head.start] + dz;
        let w_head = self.p(&l.w_head).to_vec();
        for j in 0..d {
            grad[l.w_head.start + j] = grad[l.w_head.start + j] + dz * cache.pooled[j];
        }
        let inv = c::<F>(1.0 / n as f64);
        let mut dnf = vec![F::zero(); n * d];
        for i in 0..n {
            for j in 0..d {
                dnf[i * d + j] = dz * w_head[j] * inv;
            }
        }
        let mut dcur = {
            let (g, rest) = grad.split_at_mut(l.lnf_b.start);
            layer_norm_back(&dnf, &cache.lnf, self.p(&l.lnf_g), &mut g[l.lnf_g.clone()], &mut rest[..d], d)
        };

        let scale = c::<F>(1.0 / (hd as f64).sqrt());
        for (lr, lc) in l.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward branch.
            let dff = &dcur;
            acc_at_b(&lc.g, dff, &mut grad[lr.w2.clone()], n, f, d);
            acc_rows(dff, &mut grad[lr.b2.clone()], d);
            let dg = mul_bt(dff, self.p(&lr.w2), n, f, d);
            let dh1: Vec<F> = dg.iter().zip(&lc.h1).map(|(a, x)| *a * gelu_grad(*x)).collect();
            acc_at_b(&lc.n2, &dh1, &mut grad[lr.w1.clone()], n, d, f);
            acc_rows(&dh1, &mut grad[lr.b1.clone()], f);
            let dn2 = mul_bt(&dh1, self.p(&lr.w1), n, d, f);
            let dx_ln2 = {
                let (g, rest) = grad.split_at_mut(lr.ln2_b.start);
                layer_norm_back(&dn2, &lc.ln2, self.p(&lr.ln2_g), &mut g[lr.ln2_g.clone()], &mut rest[..d], d)
            };
            let dmid: Vec<F> = dcur.iter().zip(&dx_ln2).map(|(a, b)| *a + *b).collect();

            // Attention branch.
            acc_at_b(&lc.attn, &dmid, &mut grad[lr.wo.clone()], n, h, d);
            acc_rows(&dmid, &mut grad[lr.bo.clone()], d);
            let dattn = mul_bt(&dmid, self.p(&lr.wo), n, h, d);
            let mut dq = vec![F::zero(); n * h];
            let mut dk = vec![F::zero(); n * h];
            let mut dv = vec![F::zero(); n * h];
            let mut dp = vec![F::zero(); n];
            for hh in 0..cfg.heads {
                let off = hh * hd;
                for i in 0..n {
                    let pr = &lc.probs[(hh * n + i) * n..(hh * n + i + 1) * n];
                    let da = &dattn[i * h + off..i * h + off + hd];
                    let mut dot = F::zero();
                    for j in 0..n {
                        let vj = &lc.v[j * h + off..j * h + off + hd];
                        dp[j] = da.iter().zip(vj).fold(F::zero(), |s, (a, b)| s + *a * *b);
                        dot = dot + dp[j] * pr[j];
                        for (g, a) in dv[j * h + off..j * h + off + hd].iter_mut().zip(da) {
                            *g = *g + pr[j] * *a;
                        }
                    }
                    for j in 0..n {
                        let ds = pr[j] * (dp[j] - dot) * scale;
                        if ds == F::zero() {
                            continue;
                        }
                        for e in 0..hd {
                            dq[i * h + off + e] = dq[i * h + off + e] + ds * lc.k[j * h + off + e];
                            dk[j * h + off + e] = dk[j * h + off + e] + ds * lc.q[i * h + off + e];
                        }
                    }
                }
            }
            let mut dn1 = vec![F::zero(); n * d];
            for (dy, w, b) in [(&dq, &lr.wq, &lr.bq), (&dk, &lr.wk, &lr.bk), (&dv, &lr.wv, &lr.bv)] {
                acc_at_b(&lc.n1, dy, &mut grad[w.clone()], n, d, h);
                acc_rows(dy, &mut grad[b.clone()], h);
                for (a, g) in dn1.iter_mut().zip(mul_bt(dy, self.p(w), n, d, h)) {
                    *a = *a + g;
                }
            }
            let dx_ln1 = {
                let (g, rest) = grad.split_at_mut(lr.ln1_b.start);
                layer_norm_back(&dn1, &lc.ln1, self.p(&lr.ln1_g), &mut g[lr.ln1_g.clone()], &mut rest[..d], d)
            };
            dcur = dmid.iter().zip(&dx_ln1).map(|(a, b)| *a + *b).collect();
        }

        // Input projection and positional encoding.
        acc_at_b(&cache.input, &dcur, &mut grad[l.w_in.clone()], n, cfg.n_info, d);
        acc_rows(&dcur, &mut grad[l.b_in.clone()], d);
        for (i, t) in cache.rows.iter().enumerate() {
            for j in 0..d {
                let k = l.pos.start + t * d + j;
                grad[k] = grad[k] + dcur[i * d + j];
            }
        }
        loss
    }

    /// Mean BCE loss and its exact gradient over `batch`. Samples are split
    /// into fixed chunks processed in parallel and summed in chunk order, so
    /// the result does not depend on the thread count.
    pub fn loss_and_gradients(&self, batch: &[(&TemporalTensor, f64)]) -> Result<(f64, Vec<F>)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        for (x, _) in batch {
            self.check(x)?;
        }
        const CHUNK: usize = 4;
        let weight = c::<F>(1.0 / batch.len() as f64);
        let parts: Vec<(f64, Vec<F>)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![F::zero(); self.layout.total];
                let loss = chunk.iter().map(|(x, y)| self.backward_into(x, *y, weight, &mut g)).sum::<f64>();
                (loss, g)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![F::zero(); self.layout.total];
        for (loss, g) in parts {
            total += loss;
            for (a, b) in grad.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        Ok((total / batch.len() as f64, grad))
    }

    pub fn loss(&self, batch: &[(&TemporalTensor, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in batch {
            total += bce_logit(self.logit(x)?, *y);
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            validation_split: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::Config("patience, batch_size and max_epochs must be at least 1".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::Config("validation_split must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
    lr: F,
    b1: F,
    b2: F,
    eps: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
            lr: c(cfg.learning_rate),
            b1: c(cfg.beta1),
            b2: c(cfg.beta2),
            eps: c(cfg.epsilon),
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        self.t += 1;
        let bc1 = F::one() - self.b1.powi(self.t);
        let bc2 = F::one() - self.b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.b1 * self.m[i] + (F::one() - self.b1) * grad[i];
            self.v[i] = self.b2 * self.v[i] + (F::one() - self.b2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = params[i] - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VpmModel<f32>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// (train loss, validation loss) per epoch.
    pub history: Vec<(f64, f64)>,
    pub validation_accuracy: f64,
}

/// Stratified split: each class contributes `split` of its samples to validation.
pub fn split_indices(labels: &[f64], split: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == class).collect();
        idx.shuffle(rng);
        let k = ((idx.len() as f64 * split).round() as usize).clamp(1.min(idx.len()), idx.len().saturating_sub(1).max(1));
        val.extend_from_slice(&idx[..k.min(idx.len())]);
        train.extend_from_slice(&idx[k.min(idx.len())..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub fn accuracy(model: &VpmModel<f32>, data: &[(&TemporalTensor, f64)]) -> Result<f64> {
    let mut ok = 0usize;
    for (x, y) in data {
        let p = model.predict(x)?;
        if (p >= 0.5) == (*y >= 0.5) {
            ok += 1;
        }
    }
    Ok(ok as f64 / data.len().max(1) as f64)
}

/// Fit with Adam on mean BCE and early stopping; returns the parameters with
/// the lowest validation loss.
pub fn train(dataset: &[(TemporalTensor, f64)], model_cfg: VpmConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.iter().any(|(_, y)| *y != 0.0 && *y != 1.0) {
        return Err(Error::Training("labels must be 0 or 1".into()));
    }
    let pos = dataset.iter().filter(|(_, y)| *y == 1.0).count();
    if pos == 0 || pos == dataset.len() {
        return Err(Error::Training("dataset must contain both labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VpmModel::<f32>::new(model_cfg, rng.gen())?;
    for (x, _) in dataset {
        model.check(x)?;
    }
    let labels: Vec<f64> = dataset.iter().map(|(_, y)| *y).collect();
    let (mut train_idx, val_idx) = split_indices(&labels, cfg.validation_split, &mut rng);
    let val: Vec<(&TemporalTensor, f64)> = val_idx.iter().map(|i| (&dataset[*i].0, dataset[*i].1)).collect();
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut best = (f64::INFINITY, model.params.clone(), 0usize);
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<(&TemporalTensor, f64)> = chunk.iter().map(|i| (&dataset[*i].0, dataset[*i].1)).collect();
            let (loss, grad) = model.loss_and_gradients(&batch)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!("parameters diverged at epoch {epoch}")));
        }
        let val_loss = model.loss(&val)?;
        history.push((epoch_loss / train_idx.len().max(1) as f64, val_loss));
        log::debug!("epoch {epoch}: train {:.4} val {val_loss:.4}", history.last().unwrap().0);
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let epochs_run = history.len();
    model.params = best.1;
    let validation_accuracy = accuracy(&model, &val)?;
    Ok(TrainOutcome { model, best_epoch: best.2, epochs_run, history, validation_accuracy })
}

/// A trained model bundled with the tensor layout and channel statistics it
/// was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpmPredictor {
    pub config: VpmConfig,
    pub tensor: TensorConfig,
    pub norms: NormStats,
    pub params: Vec<f32>,
}

impl VpmPredictor {
    pub fn new(model: &VpmModel<f32>, tensor: TensorConfig, norms: NormStats) -> Result<Self> {
        if tensor.t_fixed != model.cfg.t_fixed || tensor.n_info() != model.cfg.n_info {
            return Err(Error::Incompatible("tensor layout does not match the model input".into()));
        }
        Ok(VpmPredictor { config: model.cfg, tensor, norms, params: model.params.clone() })
    }

    pub fn model(&self) -> Result<VpmModel<f32>> {
        VpmModel::from_params(self.config, self.params.clone())
    }

    /// Violation probability of a recorded trace.
    pub fn score(&self, trace: &Trace) -> Result<f64> {
        self.model()?.predict(&temporal_tensor(trace, &self.tensor, &self.norms)?)
    }
}
