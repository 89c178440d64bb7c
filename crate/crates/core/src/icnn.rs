//! Fully and partially input-convex networks.
//!
//! Hidden layer `l` computes `z_{l+1} = act(W_x x + W_z z_l + W_c c_l + b)`
//! with `W_z ≥ 0` and `act(v) = max(0, v − offset)`. The context path
//! `c_{l+1} = relu(V c_l + v)` carries the non-convex inputs (PICNN only).
//! The output is linear in `x`, `z_L` and `c_L`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::features::{FeatureFrame, RegressorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcnnKind {
    Ficnn,
    Picnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub offset: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20],
            offset: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 3e-3,
            epochs: 60,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Lower bound on the raw output-layer skip coefficients summed over a
/// group of convex inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipFloor {
    pub inputs: Vec<usize>,
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub c_mean: Vec<f64>,
    pub c_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalization {
    pub fn identity(n_x: usize, n_c: usize) -> Self {
        Self {
            x_mean: vec![0.0; n_x],
            x_std: vec![1.0; n_x],
            c_mean: vec![0.0; n_c],
            c_std: vec![1.0; n_c],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    fn fit(rows: &[Sample]) -> Self {
        let n = rows.len().max(1) as f64;
        let stats = |get: &dyn Fn(&Sample) -> &[f64], dim: usize| {
            let mut mean = vec![0.0; dim];
            let mut var = vec![0.0; dim];
            for r in rows {
                for (m, v) in mean.iter_mut().zip(get(r)) {
                    *m += v / n;
                }
            }
            for r in rows {
                for ((s, v), m) in var.iter_mut().zip(get(r)).zip(&mean) {
                    *s += (v - m) * (v - m) / n;
                }
            }
            let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
            (mean, std)
        };
        let n_x = rows.first().map_or(0, |r| r.x.len());
        let n_c = rows.first().map_or(0, |r| r.c.len());
        let (x_mean, x_std) = stats(&|r: &Sample| r.x.as_slice(), n_x);
        let (c_mean, c_std) = stats(&|r: &Sample| r.c.as_slice(), n_c);
        let y_mean = rows.iter().map(|r| r.y).sum::<f64>() / n;
        let y_var = rows.iter().map(|r| (r.y - y_mean).powi(2)).sum::<f64>() / n;
        Self {
            x_mean,
            x_std,
            c_mean,
            c_std,
            y_mean,
            y_std: if y_var > 1e-24 { y_var.sqrt() } else { 1.0 },
        }
    }
}

/// One training example in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerOffsets {
    out: usize,
    x: usize,
    wx: usize,
    z_in: usize,
    wz: Option<usize>,
    c_in: usize,
    wc: Option<usize>,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ContextOffsets {
    out: usize,
    inp: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Shapes {
    layers: Vec<LayerOffsets>,
    context: Vec<ContextOffsets>,
    total: usize,
}

impl Shapes {
    fn new(kind: IcnnKind, n_x: usize, n_c: usize, hidden: &[usize]) -> Self {
        let depth = hidden.len();
        let use_ctx = kind == IcnnKind::Picnn && n_c > 0;
        let ctx_dim = |l: usize| if l == 0 { n_c } else { hidden[l - 1] };
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut layers = Vec::with_capacity(depth + 1);
        for l in 0..=depth {
            let out = if l < depth { hidden[l] } else { 1 };
            let z_in = if l == 0 { 0 } else { hidden[l - 1] };
            let c_in = if use_ctx { ctx_dim(l) } else { 0 };
            let wx = take(out * n_x);
            let wz = (l > 0).then(|| take(out * z_in));
            let wc = use_ctx.then(|| take(out * c_in));
            let b = take(out);
            layers.push(LayerOffsets {
                out,
                x: n_x,
                wx,
                z_in,
                wz,
                c_in,
                wc,
                b,
            });
        }
        let mut context = Vec::new();
        if use_ctx {
            for (l, &h) in hidden.iter().enumerate() {
                let inp = ctx_dim(l);
                let w = take(h * inp);
                let b = take(h);
                context.push(ContextOffsets { out: h, inp, w, b });
            }
        }
        Self {
            layers,
            context,
            total: off,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IcnnRepr", into = "IcnnRepr")]
pub struct IcnnModel {
    pub kind: IcnnKind,
    pub n_cvx: usize,
    pub n_ncvx: usize,
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub norm: Normalization,
    /// Convex inputs whose hidden-layer weights are kept non-negative, so
    /// the output is non-decreasing in them.
    pub monotone_inputs: Vec<usize>,
    pub skip_floors: Vec<SkipFloor>,
    pub stats: TrainStats,
    shapes: Shapes,
}

#[derive(Serialize, Deserialize)]
struct IcnnRepr {
    kind: IcnnKind,
    n_cvx: usize,
    n_ncvx: usize,
    arch: Architecture,
    params: Vec<f64>,
    norm: Normalization,
    monotone_inputs: Vec<usize>,
    skip_floors: Vec<SkipFloor>,
    stats: TrainStats,
}

impl TryFrom<IcnnRepr> for IcnnModel {
    type Error = Error;

    fn try_from(r: IcnnRepr) -> Result<Self> {
        let shapes = Shapes::new(r.kind, r.n_cvx, r.n_ncvx, &r.arch.hidden);
        if shapes.total != r.params.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.total,
                got: r.params.len(),
            });
        }
        Ok(Self {
            kind: r.kind,
            n_cvx: r.n_cvx,
            n_ncvx: r.n_ncvx,
            arch: r.arch,
            params: r.params,
            norm: r.norm,
            monotone_inputs: r.monotone_inputs,
            skip_floors: r.skip_floors,
            stats: r.stats,
            shapes,
        })
    }
}

impl From<IcnnModel> for IcnnRepr {
    fn from(m: IcnnModel) -> Self {
        Self {
            kind: m.kind,
            n_cvx: m.n_cvx,
            n_ncvx: m.n_ncvx,
            arch: m.arch,
            params: m.params,
            norm: m.norm,
            monotone_inputs: m.monotone_inputs,
            skip_floors: m.skip_floors,
            stats: m.stats,
        }
    }
}

/// Intermediate values of one forward pass (standardized units).
#[derive(Clone, Debug, Default)]
pub struct Cache {
    /// Hidden activations are `μ·ln(1 + e^{(v − offset)/μ})` when positive,
    /// the exact rectifier when zero.
    mu: f64,
    x: Vec<f64>,
    ctx: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        if g[r] == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * g[r];
        }
    }
}

fn outer_add(grad: &mut [f64], rows: usize, cols: usize, g: &[f64], v: &[f64]) {
    for r in 0..rows {
        if g[r] == 0.0 {
            continue;
        }
        let row = &mut grad[r * cols..(r + 1) * cols];
        for (o, b) in row.iter_mut().zip(v) {
            *o += g[r] * b;
        }
    }
}

impl IcnnModel {
    /// Randomly initialized network with identity normalization.
    pub fn new(kind: IcnnKind, n_cvx: usize, n_ncvx: usize, arch: Architecture, seed: u64) -> Result<Self> {
        if arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layers must have at least one unit"));
        }
        let n_ncvx = if kind == IcnnKind::Ficnn { 0 } else { n_ncvx };
        let shapes = Shapes::new(kind, n_cvx, n_ncvx, &arch.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; shapes.total];
        for lo in &shapes.layers {
            let fan = (lo.x + lo.z_in + lo.c_in).max(1) as f64;
            let a = (1.0 / fan).sqrt();
            for p in &mut params[lo.wx..lo.wx + lo.out * lo.x] {
                *p = rng.gen_range(-a..a);
            }
            if let Some(wz) = lo.wz {
                for p in &mut params[wz..wz + lo.out * lo.z_in] {
                    *p = rng.gen_range(0.0..a);
                }
            }
            if let Some(wc) = lo.wc {
                for p in &mut params[wc..wc + lo.out * lo.c_in] {
                    *p = rng.gen_range(-a..a);
                }
            }
        }
        for co in &shapes.context {
            let a = (1.0 / co.inp.max(1) as f64).sqrt();
            for p in &mut params[co.w..co.w + co.out * co.inp] {
                *p = rng.gen_range(-a..a);
            }
        }
        Ok(Self {
            kind,
            n_cvx,
            n_ncvx,
            norm: Normalization::identity(n_cvx, n_ncvx),
            arch,
            params,
            monotone_inputs: Vec::new(),
            skip_floors: Vec::new(),
            stats: TrainStats {
                epochs: 0,
                final_loss: None,
            },
            shapes,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn depth(&self) -> usize {
        self.arch.hidden.len()
    }

    fn check(&self, x: &[f64], c: &[f64]) -> Result<()> {
        if x.len() != self.n_cvx {
            return Err(Error::DimensionMismatch {
                expected: self.n_cvx,
                got: x.len(),
            });
        }
        if self.kind == IcnnKind::Picnn && c.len() != self.n_ncvx {
            return Err(Error::DimensionMismatch {
                expected: self.n_ncvx,
                got: c.len(),
            });
        }
        Ok(())
    }

    fn forward_std(&self, x: &[f64], c: &[f64], cache: &mut Cache) -> f64 {
        let p = &self.params;
        let offset = self.arch.offset;
        cache.x.clear();
        cache.x.extend_from_slice(x);
        cache.ctx.clear();
        cache.ctx.push(c.to_vec());
        for co in &self.shapes.context {
            let mut u = p[co.b..co.b + co.out].to_vec();
            matvec_add(&p[co.w..], co.out, co.inp, cache.ctx.last().unwrap(), &mut u);
            u.iter_mut().for_each(|v| *v = v.max(0.0));
            cache.ctx.push(u);
        }
        cache.pre.clear();
        cache.z.clear();
        let depth = self.depth();
        let mut out = 0.0;
        for (l, lo) in self.shapes.layers.iter().enumerate() {
            let mut a = p[lo.b..lo.b + lo.out].to_vec();
            matvec_add(&p[lo.wx..], lo.out, lo.x, x, &mut a);
            if let Some(wz) = lo.wz {
                matvec_add(&p[wz..], lo.out, lo.z_in, &cache.z[l - 1], &mut a);
            }
            if let Some(wc) = lo.wc {
                matvec_add(&p[wc..], lo.out, lo.c_in, &cache.ctx[l], &mut a);
            }
            if l < depth {
                let mu = cache.mu;
                let z = a
                    .iter()
                    .map(|v| {
                        let s = v - offset;
                        if mu > 0.0 {
                            s.max(0.0) + mu * (-(s / mu).abs()).exp().ln_1p()
                        } else {
                            s.max(0.0)
                        }
                    })
                    .collect();
                cache.pre.push(a);
                cache.z.push(z);
            } else {
                out = a[0];
            }
        }
        out
    }

    /// Back-propagates `g = ∂loss/∂output` (standardized). Accumulates
    /// parameter gradients into `grad` when given and returns the gradient
    /// with respect to the standardized convex input.
    fn backward_std(&self, cache: &Cache, g: f64, mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let p = &self.params;
        let depth = self.depth();
        let offset = self.arch.offset;
        let mut dx = vec![0.0; self.n_cvx];
        let mut dctx: Vec<Vec<f64>> = cache.ctx.iter().map(|c| vec![0.0; c.len()]).collect();
        let mut upstream = vec![g];
        for l in (0..=depth).rev() {
            let lo = self.shapes.layers[l];
            let da: Vec<f64> = if l == depth {
                upstream.clone()
            } else {
                upstream
                    .iter()
                    .zip(&cache.pre[l])
                    .map(|(u, a)| {
                        let s = a - offset;
                        if cache.mu > 0.0 {
                            u * sigmoid(s / cache.mu)
                        } else if s > 0.0 {
                            *u
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            matvec_t_add(&p[lo.wx..], lo.out, lo.x, &da, &mut dx);
            if let Some(gr) = grad.as_deref_mut() {
                outer_add(&mut gr[lo.wx..], lo.out, lo.x, &da, &cache.x);
                for (o, d) in gr[lo.b..lo.b + lo.out].iter_mut().zip(&da) {
                    *o += d;
                }
                if let Some(wz) = lo.wz {
                    outer_add(&mut gr[wz..], lo.out, lo.z_in, &da, &cache.z[l - 1]);
                }
                if let Some(wc) = lo.wc {
                    outer_add(&mut gr[wc..], lo.out, lo.c_in, &da, &cache.ctx[l]);
                }
            }
            if let Some(wc) = lo.wc {
                matvec_t_add(&p[wc..], lo.out, lo.c_in, &da, &mut dctx[l]);
            }
            if let Some(wz) = lo.wz {
                let mut dz = vec![0.0; lo.z_in];
                matvec_t_add(&p[wz..], lo.out, lo.z_in, &da, &mut dz);
                upstream = dz;
            }
        }
        if let Some(gr) = grad {
            for l in (0..self.shapes.context.len()).rev() {
                let co = self.shapes.context[l];
                let dq: Vec<f64> = dctx[l + 1]
                    .iter()
                    .zip(&cache.ctx[l + 1])
                    .map(|(d, u)| if *u > 0.0 { *d } else { 0.0 })
                    .collect();
                outer_add(&mut gr[co.w..], co.out, co.inp, &dq, &cache.ctx[l]);
                for (o, d) in gr[co.b..co.b + co.out].iter_mut().zip(&dq) {
                    *o += d;
                }
                let (head, _) = dctx.split_at_mut(l + 1);
                matvec_t_add(&p[co.w..], co.out, co.inp, &dq, &mut head[l]);
            }
        }
        dx
    }

    fn standardize(&self, x: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = &self.norm;
        let xs = x.iter().zip(&n.x_mean).zip(&n.x_std).map(|((v, m), s)| (v - m) / s).collect();
        let cs = if self.kind == IcnnKind::Picnn {
            c.iter().zip(&n.c_mean).zip(&n.c_std).map(|((v, m), s)| (v - m) / s).collect()
        } else {
            Vec::new()
        };
        (xs, cs)
    }

    /// Network output in raw units. FICNN ignores `x_ncvx`.
    pub fn forward(&self, x_cvx: &[f64], x_ncvx: &[f64]) -> Result<f64> {
        self.check(x_cvx, x_ncvx)?;
        let (xs, cs) = self.standardize(x_cvx, x_ncvx);
        let out = self.forward_std(&xs, &cs, &mut Cache::default());
        Ok(out * self.norm.y_std + self.norm.y_mean)
    }

    /// `∂output/∂x_cvx` in raw units; subgradient 0 at activation kinks.
    pub fn gradient(&self, x_cvx: &[f64], x_ncvx: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_with_gradient(x_cvx, x_ncvx)?.1)
    }

    pub fn forward_with_gradient(&self, x_cvx: &[f64], x_ncvx: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.smoothed_forward_with_gradient(x_cvx, x_ncvx, 0.0)
    }

    /// Output and gradient with every hidden rectifier replaced by a
    /// softplus of width `mu` (standardized units). The result is smooth,
    /// still convex in `x_cvx`, and over-estimates the exact output by at
    /// most about `mu·ln 2` per unit propagated. `mu = 0` is exact.
    pub fn smoothed_forward_with_gradient(&self, x_cvx: &[f64], x_ncvx: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
        self.check(x_cvx, x_ncvx)?;
        let (xs, cs) = self.standardize(x_cvx, x_ncvx);
        let mut cache = Cache {
            mu: mu.max(0.0),
            ..Cache::default()
        };
        let out = self.forward_std(&xs, &cs, &mut cache);
        let dxs = self.backward_std(&cache, 1.0, None);
        let g = dxs
            .iter()
            .zip(&self.norm.x_std)
            .map(|(d, s)| d * self.norm.y_std / s)
            .collect();
        Ok((out * self.norm.y_std + self.norm.y_mean, g))
    }

    /// Restores the constraints that make the output convex in `x_cvx`.
    pub fn project(&mut self) {
        let depth = self.depth();
        for (l, lo) in self.shapes.layers.clone().iter().enumerate() {
            if let Some(wz) = lo.wz {
                for v in &mut self.params[wz..wz + lo.out * lo.z_in] {
                    *v = v.max(0.0);
                }
            }
            if l < depth {
                for r in 0..lo.out {
                    for &j in &self.monotone_inputs {
                        let v = &mut self.params[lo.wx + r * lo.x + j];
                        *v = v.max(0.0);
                    }
                }
            }
        }
        let out = self.shapes.layers[depth];
        for f in &self.skip_floors {
            // raw coefficient of input j is y_std·w_j / x_std_j
            let a: Vec<f64> = f.inputs.iter().map(|&j| self.norm.y_std / self.norm.x_std[j]).collect();
            let s: f64 = f.inputs.iter().zip(&a).map(|(&j, aj)| aj * self.params[out.wx + j]).sum();
            if s < f.floor {
                let t = (f.floor - s) / a.iter().map(|v| v * v).sum::<f64>();
                for (&j, aj) in f.inputs.iter().zip(&a) {
                    self.params[out.wx + j] += t * aj;
                }
            }
        }
    }

    /// Smallest `W_z` entry; non-negative whenever the model is convex.
    pub fn min_passthrough_weight(&self) -> f64 {
        self.shapes
            .layers
            .iter()
            .filter_map(|lo| lo.wz.map(|wz| (wz, lo.out * lo.z_in)))
            .flat_map(|(o, n)| self.params[o..o + n].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Mutable view of the direct input weights of layer `l`, row-major.
    pub fn input_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let lo = self.shapes.layers[l];
        &mut self.params[lo.wx..lo.wx + lo.out * lo.x]
    }

    pub fn passthrough_weights_mut(&mut self, l: usize) -> Option<&mut [f64]> {
        let lo = self.shapes.layers[l];
        lo.wz.map(|wz| &mut self.params[wz..wz + lo.out * lo.z_in])
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let lo = self.shapes.layers[l];
        &mut self.params[lo.b..lo.b + lo.out]
    }

    /// Mini-batch Adam on mean squared error, projecting after every update.
    /// Normalization constants are fitted on `data` first.
    pub fn train(mut self, data: &[Sample], cfg: &TrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::NotEnoughData("empty ICNN training set".into()));
        }
        if !(cfg.step_size > 0.0) || cfg.batch_size == 0 {
            return Err(Error::invalid("step size and batch size must be positive"));
        }
        if let Some(r) = data.iter().find(|r| r.x.len() != self.n_cvx) {
            return Err(Error::DimensionMismatch {
                expected: self.n_cvx,
                got: r.x.len(),
            });
        }
        self.norm = Normalization::fit(data);
        if self.kind == IcnnKind::Ficnn {
            self.norm.c_mean.clear();
            self.norm.c_std.clear();
        }
        self.project();
        let std_rows: Vec<(Vec<f64>, Vec<f64>, f64)> = data
            .iter()
            .map(|r| {
                let (x, c) = self.standardize(&r.x, &r.c);
                (x, c, (r.y - self.norm.y_mean) / self.norm.y_std)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut m = vec![0.0; self.params.len()];
        let mut v = vec![0.0; self.params.len()];
        let mut grad = vec![0.0; self.params.len()];
        let mut cache = Cache::default();
        let mut t = 0i32;
        let mut last_loss = None;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let (x, c, y) = &std_rows[i];
                    let out = self.forward_std(x, c, &mut cache);
                    let err = out - y;
                    epoch_loss += err * err;
                    self.backward_std(&cache, 2.0 * err * scale, Some(&mut grad));
                }
                t += 1;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for k in 0..self.params.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                    self.params[k] -= cfg.step_size * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
                self.project();
            }
            let loss = epoch_loss / data.len() as f64;
            if !loss.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            last_loss = Some(loss * self.norm.y_std * self.norm.y_std);
        }
        self.stats = TrainStats {
            epochs: cfg.epochs,
            final_loss: last_loss,
        };
        Ok(self)
    }
}

/// Number of convex inputs that feed back through the recursion.
pub const RECURSIVE_INPUTS: usize = 3;
const DECISION_INPUTS: usize = 2;
const CONTEXT_INPUTS: usize = 6;

/// An ICNN predicting one zone's temperature change per step, applied
/// recursively over a horizon.
///
/// Convex inputs: `T_k`, `T_{k−1}`, `T_k − T_amb,k`, `u_k`, `u_{k−1}`.
/// Context (non-convex for PICNN, convex for FICNN): `I_hor,k`,
/// `I_hor,k−1`, mean neighbor minus last measured temperature, time of day
/// as sine and cosine, and the mode sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcnnZoneModel {
    pub net: IcnnModel,
    pub config: RegressorConfig,
    pub step_secs: i64,
    #[serde(default)]
    pub energy_gain: Option<f64>,
}

/// Inputs for step `i` of a rollout from `now`.
struct StepInputs {
    t_k: f64,
    t_km1: f64,
    u_k: f64,
    u_km1: f64,
}

fn context(frame: &FeatureFrame, i: usize, t_bar: f64) -> [f64; CONTEXT_INPUTS] {
    use std::f64::consts::TAU;
    let nb = if frame.neighbors.is_empty() {
        t_bar
    } else {
        frame.neighbors.iter().map(|n| n[i]).sum::<f64>() / frame.neighbors.len() as f64
    };
    let tod = frame.tod[i] / 86_400.0;
    [
        frame.i_hor[i],
        frame.i_hor[i.saturating_sub(1)],
        nb - t_bar,
        (TAU * tod).sin(),
        (TAU * tod).cos(),
        frame.sign[i],
    ]
}

impl IcnnZoneModel {
    pub fn input_sizes(kind: IcnnKind) -> (usize, usize) {
        match kind {
            IcnnKind::Ficnn => (RECURSIVE_INPUTS + DECISION_INPUTS + CONTEXT_INPUTS, 0),
            IcnnKind::Picnn => (RECURSIVE_INPUTS + DECISION_INPUTS, CONTEXT_INPUTS),
        }
    }

    fn inputs(&self, frame: &FeatureFrame, i: usize, s: &StepInputs, t_bar: f64) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![s.t_k, s.t_km1, s.t_k - frame.ambient[i], s.u_k, s.u_km1];
        let c = context(frame, i, t_bar);
        match self.net.kind {
            IcnnKind::Ficnn => {
                x.extend_from_slice(&c);
                (x, Vec::new())
            }
            IcnnKind::Picnn => (x, c.to_vec()),
        }
    }

    pub fn training_samples(frames: &[FeatureFrame], kind: IcnnKind) -> Vec<Sample> {
        let mut out = Vec::new();
        for f in frames {
            for i in 1..f.len().saturating_sub(1) {
                let s = StepInputs {
                    t_k: f.y[i],
                    t_km1: f.y[i - 1],
                    u_k: f.actuator_at(i, f.y[i]),
                    u_km1: f.actuator_at(i - 1, f.y[i - 1]),
                };
                let mut x = vec![s.t_k, s.t_km1, s.t_k - f.ambient[i], s.u_k, s.u_km1];
                let c = context(f, i, f.y[i]);
                let c = match kind {
                    IcnnKind::Ficnn => {
                        x.extend_from_slice(&c);
                        Vec::new()
                    }
                    IcnnKind::Picnn => c.to_vec(),
                };
                out.push(Sample {
                    x,
                    c,
                    y: f.y[i + 1] - f.y[i],
                });
            }
        }
        out
    }

    /// Constraints keeping the recursive rollout convex in the decisions:
    /// hidden weights on fed-back temperatures are non-negative, and the
    /// next temperature stays non-decreasing in `T_k` and `T_{k−1}` through
    /// the linear skip path.
    pub fn constrain(net: &mut IcnnModel) {
        net.monotone_inputs = (0..RECURSIVE_INPUTS).collect();
        net.skip_floors = vec![
            SkipFloor {
                inputs: vec![0, 2],
                floor: -1.0,
            },
            SkipFloor {
                inputs: vec![1],
                floor: 0.0,
            },
        ];
        net.project();
    }

    pub fn fit(
        segments: &[TimeSeries],
        config: &RegressorConfig,
        kind: IcnnKind,
        arch: Architecture,
        train: &TrainConfig,
    ) -> Result<Self> {
        let step_secs = segments
            .first()
            .ok_or_else(|| Error::NotEnoughData("no training segments".into()))?
            .step_secs();
        let frames = segments
            .iter()
            .map(|s| FeatureFrame::new(s, config))
            .collect::<Result<Vec<_>>>()?;
        let data = Self::training_samples(&frames, kind);
        let (n_x, n_c) = Self::input_sizes(kind);
        let mut net = IcnnModel::new(kind, n_x, n_c, arch, train.seed)?;
        Self::constrain(&mut net);
        let net = net.train(&data, train)?;
        let energy_gain = match config.actuator {
            crate::features::ActuatorOption::MeasuredEnergy => Some(crate::features::fit_energy_gain(segments, config)?),
            _ => None,
        };
        Ok(Self {
            net,
            config: config.clone(),
            step_secs,
            energy_gain,
        })
    }

    /// Recursive rollout of `y[now+1 ..= now+steps]`; `u[j]` is the drive at
    /// `now + j` in model units, defaulting to the frame's with the room
    /// temperature frozen at `y[now]`.
    pub fn predict_recursive(&self, frame: &FeatureFrame, now: usize, steps: usize, u: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.rollout(frame, now, steps, u, false, 0.0)?.0)
    }

    /// Rollout plus the Jacobian `∂y[now+1+j]/∂u[now+m]` (row `j`, column `m`).
    pub fn rollout_with_jacobian(
        &self,
        frame: &FeatureFrame,
        now: usize,
        steps: usize,
        u: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.rollout(frame, now, steps, u, true, 0.0)
    }

    /// [`IcnnZoneModel::rollout_with_jacobian`] through the softplus-smoothed
    /// network of width `mu`; smooth and convex in the drives.
    pub fn smoothed_rollout_with_jacobian(
        &self,
        frame: &FeatureFrame,
        now: usize,
        steps: usize,
        u: Option<&[f64]>,
        mu: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.rollout(frame, now, steps, u, true, mu)
    }

    /// Smoothed rollout without the Jacobian.
    pub fn smoothed_rollout(&self, frame: &FeatureFrame, now: usize, steps: usize, u: Option<&[f64]>, mu: f64) -> Result<Vec<f64>> {
        Ok(self.rollout(frame, now, steps, u, false, mu)?.0)
    }

    fn rollout(
        &self,
        frame: &FeatureFrame,
        now: usize,
        steps: usize,
        u: Option<&[f64]>,
        jacobian: bool,
        mu: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if now < 1 {
            return Err(Error::TooShort { needed: 1, have: now });
        }
        if now + steps > frame.len() {
            return Err(Error::ForecastTooShort {
                needed: now + steps,
                have: frame.len(),
            });
        }
        if let Some(u) = u {
            if u.len() < steps {
                return Err(Error::ForecastTooShort { needed: steps, have: u.len() });
            }
        }
        let t_bar = frame.y[now];
        let drive = |i: usize| match u {
            Some(u) if i >= now => u[i - now],
            _ if i >= now => frame.actuator_at(i, t_bar),
            _ => frame.actuator_at(i, frame.y[i]),
        };
        let mut pred = Vec::with_capacity(steps);
        let mut jac: Vec<Vec<f64>> = Vec::new();
        let mut t_prev = frame.y[now - 1];
        let mut t_cur = t_bar;
        let mut d_prev = vec![0.0; steps];
        let mut d_cur = vec![0.0; steps];
        for j in 0..steps {
            let i = now + j;
            let s = StepInputs {
                t_k: t_cur,
                t_km1: t_prev,
                u_k: drive(i),
                u_km1: drive(i - 1),
            };
            let (x, c) = self.inputs(frame, i, &s, t_bar);
            let next;
            if jacobian {
                let (delta, g) = self.net.smoothed_forward_with_gradient(&x, &c, mu)?;
                next = t_cur + delta;
                let mut d_next = d_cur.clone();
                for m in 0..steps {
                    d_next[m] += (g[0] + g[2]) * d_cur[m] + g[1] * d_prev[m];
                }
                d_next[j] += g[3];
                if j > 0 {
                    d_next[j - 1] += g[4];
                }
                jac.push(d_next.clone());
                d_prev = std::mem::replace(&mut d_cur, d_next);
            } else if mu > 0.0 {
                next = t_cur + self.net.smoothed_forward_with_gradient(&x, &c, mu)?.0;
            } else {
                next = t_cur + self.net.forward(&x, &c)?;
            }
            pred.push(next);
            t_prev = t_cur;
            t_cur = next;
        }
        Ok((pred, jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(kind: IcnnKind, seed: u64) -> IcnnModel {
        let mut m = IcnnModel::new(kind, 4, 3, Architecture::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for b in 0..m.depth() + 1 {
            for v in m.bias_mut(b) {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = IcnnModel::new(IcnnKind::Picnn, 3, 2, Architecture::default(), 1).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0], &[0.5, 9.0]).unwrap(), 0.0);
        assert_eq!(m.gradient(&[1.0, -2.0, 3.0], &[0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_evaluated_single_layer() {
        let arch = Architecture {
            hidden: vec![1],
            offset: 0.0,
        };
        let mut m = IcnnModel::new(IcnnKind::Ficnn, 1, 0, arch, 0).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m.input_weights_mut(0)[0] = 1.0;
        m.passthrough_weights_mut(1).unwrap()[0] = 1.0;
        assert_eq!(m.forward(&[2.0], &[]).unwrap(), 2.0);
        assert_eq!(m.forward(&[-2.0], &[]).unwrap(), 0.0);
    }

    #[test]
    fn linear_network_gradient_is_its_weights() {
        let arch = Architecture {
            hidden: vec![],
            offset: 0.0,
        };
        let mut m = IcnnModel::new(IcnnKind::Ficnn, 3, 0, arch, 0).unwrap();
        m.input_weights_mut(0).copy_from_slice(&[0.5, -1.5, 2.0]);
        assert_eq!(m.gradient(&[0.3, 0.1, 7.0], &[]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = random_model(IcnnKind::Picnn, 1);
        assert!(matches!(m.forward(&[0.0; 3], &[0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.forward(&[0.0; 4], &[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        let f = random_model(IcnnKind::Ficnn, 1);
        assert!(f.forward(&[0.0; 4], &[]).is_ok());
    }

    #[test]
    fn output_is_convex_in_convex_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [IcnnKind::Ficnn, IcnnKind::Picnn] {
            let m = random_model(kind, 3);
            assert!(m.min_passthrough_weight() >= 0.0);
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for _ in 0..500 {
                let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let l: f64 = rng.gen_range(0.0..1.0);
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| l * x + (1.0 - l) * y).collect();
                let fm = m.forward(&mid, &c).unwrap();
                let bound = l * m.forward(&a, &c).unwrap() + (1.0 - l) * m.forward(&b, &c).unwrap();
                assert!(fm <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(IcnnKind::Picnn, 4);
        let h = 1e-5;
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = m.gradient(&x, &c).unwrap();
            for j in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (m.forward(&xp, &c).unwrap() - m.forward(&xm, &c).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn smoothing_is_an_upper_bound_that_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(IcnnKind::Picnn, 4);
        let h = 1e-6;
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let exact = m.forward(&x, &c).unwrap();
            let mut prev = f64::INFINITY;
            for mu in [1e-1, 1e-2, 1e-3, 1e-6] {
                let (f, g) = m.smoothed_forward_with_gradient(&x, &c, mu).unwrap();
                assert!(f >= exact - 1e-12 && f <= prev + 1e-12);
                prev = f;
                for j in 0..4 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fp = m.smoothed_forward_with_gradient(&xp, &c, mu).unwrap().0;
                    let fm = m.smoothed_forward_with_gradient(&xm, &c, mu).unwrap().0;
                    let fd = (fp - fm) / (2.0 * h);
                    if mu >= 1e-3 {
                        assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1.0), "mu {mu}: {fd} vs {}", g[j]);
                    }
                }
            }
            assert!((prev - exact).abs() < 1e-4);
        }
    }

    #[test]
    fn learns_a_convex_toy_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Sample> {
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(-1.0..1.0);
                    Sample {
                        x: vec![u],
                        c: vec![],
                        y: u.max(0.0),
                    }
                })
                .collect()
        };
        let train = gen(&mut rng, 800);
        let val = gen(&mut rng, 200);
        let m = IcnnModel::new(IcnnKind::Ficnn, 1, 0, Architecture::default(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 150,
            ..TrainConfig::default()
        };
        let m = m.train(&train, &cfg).unwrap();
        assert!(m.min_passthrough_weight() >= 0.0);
        let mse = val
            .iter()
            .map(|s| (m.forward(&s.x, &[]).unwrap() - s.y).powi(2))
            .sum::<f64>()
            / val.len() as f64;
        assert!(mse <= 1e-3, "mse {mse}");
        let again = IcnnModel::new(IcnnKind::Ficnn, 1, 0, Architecture::default(), 1)
            .unwrap()
            .train(&train, &cfg)
            .unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        let m = random_model(IcnnKind::Ficnn, 6);
        let data = vec![
            Sample {
                x: vec![0.0; 4],
                c: vec![],
                y: 1.0
            };
            4
        ];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let t = m.clone().train(&data, &cfg).unwrap();
        assert_eq!(t.params, m.params);
        assert_eq!(t.stats.epochs, 0);
    }

    #[test]
    fn nonnegative_input_weights_make_output_monotone() {
        let mut m = random_model(IcnnKind::Ficnn, 8);
        m.monotone_inputs = (0..4).collect();
        m.skip_floors = vec![SkipFloor {
            inputs: vec![0],
            floor: 0.0,
        }];
        for j in 1..4 {
            m.skip_floors.push(SkipFloor {
                inputs: vec![j],
                floor: 0.0,
            });
        }
        m.project();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let j = rng.gen_range(0..4);
            let mut y = x.clone();
            y[j] += rng.gen_range(0.0..1.0);
            assert!(m.forward(&y, &[]).unwrap() >= m.forward(&x, &[]).unwrap() - 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = random_model(IcnnKind::Picnn, 2);
        let s = serde_json::to_string(&m).unwrap();
        let back: IcnnModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
