//! Multilayer perceptron regressor: tanh hidden layers, linear output, mean
//! squared error, Adam.
//!
//! Inputs are sparse and standardized on the fly. The first layer is
//! evaluated only over a row's non-zero slots; the constant term that the
//! means contribute is carried per hidden unit and refreshed after each
//! update, and its gradient is applied once per batch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::SparseRow;
use super::model::Normalization;

/// Parameters in one flat buffer. Layer 0 weights are stored input-major
/// (`[in][out]`) so a sparse row touches contiguous runs; deeper layers are
/// output-major (`[out][in]`). Each layer's biases follow its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Mlp {
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 1, "scalar output");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-a..a)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// (weight offset, bias offset) of layer `l`.
    pub fn offsets(&self, l: usize) -> (usize, usize) {
        let mut o = 0;
        for w in self.sizes.windows(2).take(l) {
            o += w[0] * w[1] + w[1];
        }
        (o, o + self.sizes[l] * self.sizes[l + 1])
    }

    /// Layer `l` weights as `[out][in]` rows.
    pub fn layer_weights(&self, l: usize) -> Vec<Vec<f64>> {
        let (wo, _) = self.offsets(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        (0..n_out)
            .map(|j| {
                (0..n_in)
                    .map(|i| {
                        if l == 0 {
                            self.params[wo + i * n_out + j]
                        } else {
                            self.params[wo + j * n_in + i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn layer_biases(&self, l: usize) -> Vec<f64> {
        let (_, bo) = self.offsets(l);
        self.params[bo..bo + self.sizes[l + 1]].to_vec()
    }

    pub fn from_layers(sizes: &[usize], weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>]) -> Option<Self> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != weights.len() {
            return None;
        }
        let mut params = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let wl = &weights[l];
            if wl.len() != n_out || wl.iter().any(|r| r.len() != n_in) || biases[l].len() != n_out {
                return None;
            }
            if l == 0 {
                params.extend((0..n_in).flat_map(|i| wl.iter().map(move |r| r[i])));
            } else {
                params.extend(wl.iter().flatten());
            }
            params.extend(&biases[l]);
        }
        Some(Self { sizes: sizes.to_vec(), params })
    }
}

/// Standardization folded into the sparse first layer.
struct Fold<'a> {
    mean: &'a [f64],
    inv: Vec<f64>,
    /// Per hidden unit of layer 0: `sum_k w[k][j] * mean[k] / scale[k]`.
    shift: Vec<f64>,
}

impl<'a> Fold<'a> {
    fn new(norm: &'a Normalization, mlp: &Mlp) -> Self {
        let inv = norm.scale.iter().map(|s| 1.0 / s).collect();
        let mut f = Self {
            mean: &norm.mean,
            inv,
            shift: vec![0.0; mlp.sizes[1]],
        };
        f.refresh(mlp);
        f
    }

    fn refresh(&mut self, mlp: &Mlp) {
        let h = mlp.sizes[1];
        self.shift.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..mlp.sizes[0] {
            let m = self.mean[k] * self.inv[k];
            if m == 0.0 {
                continue;
            }
            let w = &mlp.params[k * h..(k + 1) * h];
            for (s, &wk) in self.shift.iter_mut().zip(w) {
                *s += wk * m;
            }
        }
    }
}

/// Activations of every layer for one row.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn fit(&mut self, sizes: &[usize]) {
        if self.acts.len() != sizes.len() - 1 || self.acts.iter().zip(&sizes[1..]).any(|(a, &n)| a.len() != n) {
            self.acts = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
            self.deltas = self.acts.clone();
        }
    }
}

fn forward(mlp: &Mlp, fold: &Fold<'_>, row: &SparseRow, s: &mut Scratch) -> f64 {
    s.fit(&mlp.sizes);
    let l_n = mlp.layers();
    let h = mlp.sizes[1];
    let (_, b0) = mlp.offsets(0);
    {
        let z = &mut s.acts[0];
        for j in 0..h {
            z[j] = mlp.params[b0 + j] - fold.shift[j];
        }
        for (k, v) in row.entries() {
            let x = v * fold.inv[k];
            if x == 0.0 {
                continue;
            }
            let w = &mlp.params[k * h..(k + 1) * h];
            for (zj, &wj) in z.iter_mut().zip(w) {
                *zj += wj * x;
            }
        }
        if l_n > 1 {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    for l in 1..l_n {
        let (wo, bo) = mlp.offsets(l);
        let (n_in, n_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
        let (prev, rest) = s.acts.split_at_mut(l);
        let a_in = &prev[l - 1];
        let out = &mut rest[0];
        for j in 0..n_out {
            let w = &mlp.params[wo + j * n_in..wo + (j + 1) * n_in];
            let z = mlp.params[bo + j] + w.iter().zip(a_in).map(|(a, b)| a * b).sum::<f64>();
            out[j] = if l + 1 < l_n { z.tanh() } else { z };
        }
    }
    s.acts[l_n - 1][0]
}

/// Adds the gradient of `scale * (prediction - target)^2` for one row into
/// `grad`, and the first-layer deltas into `delta0_sum`. Returns the
/// squared error.
fn backward(
    mlp: &Mlp,
    fold: &Fold<'_>,
    row: &SparseRow,
    target: f64,
    scale: f64,
    s: &mut Scratch,
    grad: &mut [f64],
    delta0_sum: &mut [f64],
) -> f64 {
    let y = forward(mlp, fold, row, s);
    let err = y - target;
    let l_n = mlp.layers();
    s.deltas[l_n - 1][0] = 2.0 * err * scale;
    for l in (1..l_n).rev() {
        let (wo, bo) = mlp.offsets(l);
        let (n_in, n_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
        let (lo, hi) = s.deltas.split_at_mut(l);
        let d_out = &hi[0];
        let d_in = &mut lo[l - 1];
        let a_in = &s.acts[l - 1];
        d_in.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n_out {
            let dj = d_out[j];
            grad[bo + j] += dj;
            let w = &mlp.params[wo + j * n_in..wo + (j + 1) * n_in];
            let g = &mut grad[wo + j * n_in..wo + (j + 1) * n_in];
            for i in 0..n_in {
                g[i] += dj * a_in[i];
                d_in[i] += w[i] * dj;
            }
        }
        for (d, &a) in d_in.iter_mut().zip(a_in) {
            *d *= 1.0 - a * a;
        }
    }
    let h = mlp.sizes[1];
    let (_, b0) = mlp.offsets(0);
    let d0 = &s.deltas[0];
    for j in 0..h {
        grad[b0 + j] += d0[j];
        delta0_sum[j] += d0[j];
    }
    for (k, v) in row.entries() {
        let x = v * fold.inv[k];
        if x == 0.0 {
            continue;
        }
        let g = &mut grad[k * h..(k + 1) * h];
        for (gj, &dj) in g.iter_mut().zip(d0) {
            *gj += dj * x;
        }
    }
    err * err
}

/// The mean term of the first-layer gradient, applied once per batch.
fn apply_mean_term(mlp: &Mlp, fold: &Fold<'_>, delta0_sum: &[f64], grad: &mut [f64]) {
    let h = mlp.sizes[1];
    for k in 0..mlp.sizes[0] {
        let m = fold.mean[k] * fold.inv[k];
        if m == 0.0 {
            continue;
        }
        let g = &mut grad[k * h..(k + 1) * h];
        for (gj, &dj) in g.iter_mut().zip(delta0_sum) {
            *gj -= dj * m;
        }
    }
}

/// Mean squared error over `rows` and its exact gradient.
pub fn loss_and_grad(mlp: &Mlp, norm: &Normalization, rows: &[&SparseRow], y: &[f64]) -> (f64, Vec<f64>) {
    let fold = Fold::new(norm, mlp);
    let mut grad = vec![0.0; mlp.params.len()];
    let mut d0 = vec![0.0; mlp.sizes[1]];
    let mut s = Scratch::default();
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for (r, &t) in rows.iter().zip(y) {
        loss += backward(mlp, &fold, r, t, scale, &mut s, &mut grad, &mut d0);
    }
    apply_mean_term(mlp, &fold, &d0, &mut grad);
    (loss * scale, grad)
}

pub fn mse(mlp: &Mlp, norm: &Normalization, rows: &[&SparseRow], y: &[f64]) -> f64 {
    let fold = Fold::new(norm, mlp);
    let mut s = Scratch::default();
    let sum: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let e = forward(mlp, &fold, r, &mut s) - t;
            e * e
        })
        .sum();
    sum / rows.len().max(1) as f64
}

/// Largest relative difference between the analytic gradient and central
/// finite differences with step `h`, over every parameter. Differences are
/// taken relative to `max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(mlp: &Mlp, norm: &Normalization, rows: &[&SparseRow], y: &[f64], h: f64) -> f64 {
    let (_, g) = loss_and_grad(mlp, norm, rows, y);
    let mut m = mlp.clone();
    let mut worst: f64 = 0.0;
    for p in 0..m.params.len() {
        let orig = m.params[p];
        m.params[p] = orig + h;
        let up = mse(&m, norm, rows, y);
        m.params[p] = orig - h;
        let dn = mse(&m, norm, rows, y);
        m.params[p] = orig;
        let num = (up - dn) / (2.0 * h);
        let denom = g[p].abs().max(num.abs()).max(1e-6);
        worst = worst.max((g[p] - num).abs() / denom);
    }
    worst
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains from a fresh seeded initialization. Returns the network and the
/// mean batch loss of each epoch.
pub fn train_mlp(rows: &[&SparseRow], y: &[f64], norm: &Normalization, cfg: &MlpConfig) -> (Mlp, Vec<f64>) {
    let mut sizes = vec![norm.mean.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut mlp = Mlp::new(&sizes, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05EE_D0FB_A7C4);
    let mut fold = Fold::new(norm, &mlp);
    let mut adam = Adam::new(mlp.params.len());
    let mut grad = vec![0.0; mlp.params.len()];
    let mut d0 = vec![0.0; sizes[1]];
    let mut s = Scratch::default();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let batch = cfg.batch.clamp(1, rows.len().max(1));
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            d0.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &r in chunk {
                total += backward(&mlp, &fold, rows[r], y[r], scale, &mut s, &mut grad, &mut d0);
            }
            apply_mean_term(&mlp, &fold, &d0, &mut grad);
            adam.step(&mut mlp.params, &grad, cfg.lr);
            fold.refresh(&mlp);
        }
        history.push(total / rows.len().max(1) as f64);
    }
    (mlp, history)
}

/// Inference form: standardization folded into the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMlp {
    mlp: Mlp,
}

impl PreparedMlp {
    pub fn new(mlp: &Mlp, norm: &Normalization) -> Self {
        let mut m = mlp.clone();
        let h = m.sizes[1];
        let (_, b0) = m.offsets(0);
        for k in 0..m.sizes[0] {
            let inv = 1.0 / norm.scale[k];
            for j in 0..h {
                let w = m.params[k * h + j] * inv;
                m.params[k * h + j] = w;
                m.params[b0 + j] -= w * norm.mean[k];
            }
        }
        Self { mlp: m }
    }

    pub fn predict(&self, row: &SparseRow, s: &mut Scratch) -> f64 {
        forward_prepared(&self.mlp, row, s)
    }

    pub fn n_inputs(&self) -> usize {
        self.mlp.sizes[0]
    }
}

fn forward_prepared(mlp: &Mlp, row: &SparseRow, s: &mut Scratch) -> f64 {
    s.fit(&mlp.sizes);
    let l_n = mlp.layers();
    let h = mlp.sizes[1];
    let (_, b0) = mlp.offsets(0);
    {
        let z = &mut s.acts[0];
        z.copy_from_slice(&mlp.params[b0..b0 + h]);
        for (k, v) in row.entries() {
            if v == 0.0 {
                continue;
            }
            let w = &mlp.params[k * h..(k + 1) * h];
            for (zj, &wj) in z.iter_mut().zip(w) {
                *zj += wj * v;
            }
        }
        if l_n > 1 {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    for l in 1..l_n {
        let (wo, bo) = mlp.offsets(l);
        let (n_in, n_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
        let (prev, rest) = s.acts.split_at_mut(l);
        let a_in = &prev[l - 1];
        let out = &mut rest[0];
        for j in 0..n_out {
            let w = &mlp.params[wo + j * n_in..wo + (j + 1) * n_in];
            let z = mlp.params[bo + j] + w.iter().zip(a_in).map(|(a, b)| a * b).sum::<f64>();
            out[j] = if l + 1 < l_n { z.tanh() } else { z };
        }
    }
    s.acts[l_n - 1][0]
}
