//! Ridge regression on standardized sparse features, solved from
//! accumulated second moments.
//!
//! The objective is mean squared error plus `l2 * |w|^2` over standardized
//! features, with an unpenalized intercept. Moments are accumulated per
//! cross-validation fold so any fold's complement is a subtraction, and one
//! factorization serves every label vector.

use super::features::SparseRow;
use super::model::Normalization;
use crate::error::{Error, Result};

/// Ridge on near-collinear one-hot blocks needs a floor even at `l2 = 0`.
const JITTER: f64 = 1e-6;
const MIN_VAR: f64 = 1e-12;

/// Row count, feature sums and the symmetric Gram matrix (upper triangle).
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub p: usize,
    pub n: f64,
    pub sum: Vec<f64>,
    gram: Vec<f64>,
}

impl Moments {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            n: 0.0,
            sum: vec![0.0; p],
            gram: vec![0.0; p * p],
        }
    }

    pub fn add(&mut self, row: &SparseRow) {
        let e: Vec<(usize, f64)> = row.entries().collect();
        self.n += 1.0;
        for (a, &(i, x)) in e.iter().enumerate() {
            self.sum[i] += x;
            let g = &mut self.gram[i * self.p..(i + 1) * self.p];
            for &(j, y) in &e[a..] {
                g[j] += x * y;
            }
        }
    }

    pub fn minus(&self, other: &Moments) -> Moments {
        Moments {
            p: self.p,
            n: self.n - other.n,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a - b).collect(),
            gram: self.gram.iter().zip(&other.gram).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn plus(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.gram.iter_mut().zip(&other.gram).for_each(|(a, b)| *a += b);
    }

    fn g(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.gram[a * self.p + b]
    }

    /// Standardization implied by these moments; constant features keep
    /// scale 1.
    pub fn normalization(&self) -> Normalization {
        let n = self.n.max(1.0);
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let scale = (0..self.p)
            .map(|k| {
                let var = self.g(k, k) / n - mean[k] * mean[k];
                if var > MIN_VAR {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, scale }
    }

    fn kept(&self) -> Vec<bool> {
        let n = self.n.max(1.0);
        (0..self.p)
            .map(|k| {
                let m = self.sum[k] / n;
                self.g(k, k) / n - m * m > MIN_VAR
            })
            .collect()
    }
}

/// Label-side moments matching a [`Moments`].
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub sum_y: f64,
    pub xy: Vec<f64>,
}

impl Target {
    pub fn new(p: usize) -> Self {
        Self { sum_y: 0.0, xy: vec![0.0; p] }
    }

    pub fn add(&mut self, row: &SparseRow, y: f64) {
        self.sum_y += y;
        for (k, x) in row.entries() {
            self.xy[k] += x * y;
        }
    }

    pub fn minus(&self, other: &Target) -> Target {
        Target {
            sum_y: self.sum_y - other.sum_y,
            xy: self.xy.iter().zip(&other.xy).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn plus(&mut self, other: &Target) {
        self.sum_y += other.sum_y;
        self.xy.iter_mut().zip(&other.xy).for_each(|(a, b)| *a += b);
    }
}

/// A factorized ridge system for one set of moments and one `l2`.
pub struct RidgeSolver {
    p: usize,
    n: f64,
    norm: Normalization,
    kept: Vec<bool>,
    chol: Vec<f64>,
}

/// Weights over standardized features plus intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub norm: Normalization,
}

impl LinearFit {
    pub fn predict(&self, row: &SparseRow) -> f64 {
        let mut z = self.bias;
        for (k, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                z -= w * self.norm.mean[k] / self.norm.scale[k];
            }
        }
        for (k, x) in row.entries() {
            z += self.weights[k] * x / self.norm.scale[k];
        }
        z
    }
}

impl RidgeSolver {
    pub fn new(m: &Moments, l2: f64) -> Result<Self> {
        if m.n < 1.0 {
            return Err(Error::Learn("ridge fit on no rows".into()));
        }
        let p = m.p;
        let norm = m.normalization();
        let kept = m.kept();
        let mut a = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let v = if kept[i] && kept[j] {
                    (m.g(i, j) / m.n - norm.mean[i] * norm.mean[j]) / (norm.scale[i] * norm.scale[j])
                } else {
                    0.0
                };
                a[i * p + j] = v;
                a[j * p + i] = v;
            }
            a[i * p + i] = if kept[i] { a[i * p + i] + l2 + JITTER } else { 1.0 };
        }
        cholesky(&mut a, p)?;
        Ok(Self {
            p,
            n: m.n,
            norm,
            kept,
            chol: a,
        })
    }

    pub fn solve(&self, t: &Target) -> LinearFit {
        let p = self.p;
        let ybar = t.sum_y / self.n;
        let mut b: Vec<f64> = (0..p)
            .map(|k| {
                if self.kept[k] {
                    (t.xy[k] / self.n - self.norm.mean[k] * ybar) / self.norm.scale[k]
                } else {
                    0.0
                }
            })
            .collect();
        // L y = b, then L^T w = y
        for i in 0..p {
            let row = &self.chol[i * p..i * p + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - s) / self.chol[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = 0.0;
            for j in i + 1..p {
                s += self.chol[j * p + i] * b[j];
            }
            b[i] = (b[i] - s) / self.chol[i * p + i];
        }
        for (w, &k) in b.iter_mut().zip(&self.kept) {
            if !k {
                *w = 0.0;
            }
        }
        LinearFit {
            weights: b,
            bias: ybar,
            norm: self.norm.clone(),
        }
    }
}

/// In-place lower Cholesky factor of a row-major symmetric matrix.
fn cholesky(a: &mut [f64], p: usize) -> Result<()> {
    for j in 0..p {
        let (_, tail) = a.split_at_mut(j * p);
        let row_j = &mut tail[..p];
        let d = row_j[j] - row_j[..j].iter().map(|x| x * x).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Learn(format!("ridge system not positive definite at {j}")));
        }
        let d = d.sqrt();
        row_j[j] = d;
        let row_j = &tail[..p];
        let lj: Vec<f64> = row_j[..j].to_vec();
        let rest = &mut tail[p..];
        for i in j + 1..p {
            let row_i = &mut rest[(i - j - 1) * p..(i - j) * p];
            let s: f64 = row_i[..j].iter().zip(&lj).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / d;
        }
    }
    Ok(())
}
