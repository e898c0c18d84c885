//! Soft labels: the necessity score each second should have carried.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Linear,
    Quadratic,
    PositiveExponential,
    NegativeExponential,
    Sigmoid,
}

impl Curve {
    pub const ALL: [Curve; 5] = [
        Curve::Linear,
        Curve::Quadratic,
        Curve::PositiveExponential,
        Curve::NegativeExponential,
        Curve::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Curve::Linear => "Linear",
            Curve::Quadratic => "Quadratic",
            Curve::PositiveExponential => "Exponential",
            Curve::NegativeExponential => "NegExponential",
            Curve::Sigmoid => "Sigmoid",
        }
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const EXP_K: f64 = 3.0;
const SIGMOID_K: f64 = 10.0;

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-SIGMOID_K * (u - 0.5)).exp())
}

/// Shape `g` on normalized progress `u`, with `g(0) = 0` and `g(1) = 1`.
pub fn curve_value(curve: Curve, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Learn(format!("curve argument {u} outside [0, 1]")));
    }
    Ok(match curve {
        Curve::Linear => u,
        Curve::Quadratic => u * u,
        Curve::PositiveExponential => (EXP_K * u).exp_m1() / EXP_K.exp_m1(),
        Curve::NegativeExponential => -(-EXP_K * u).exp_m1() / -(-EXP_K).exp_m1(),
        Curve::Sigmoid => {
            let (lo, hi) = (logistic(0.0), logistic(1.0));
            (logistic(u) - lo) / (hi - lo)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelParams {
    pub curve: Curve,
    pub cutoff: f64,
    pub no_pr_thres: f64,
}

/// Labels for every second from `entry_s` to the end of the scenario's
/// rows. When an early call is needed the rows end at `t_call` with label
/// 1; otherwise they end at `t_default` with label `no_pr_thres`.
pub fn build_labels(entry_s: i64, t_default: i64, t_call: Option<i64>, curve: Curve, no_pr_thres: f64) -> Result<Vec<f64>> {
    let (end, top) = match t_call {
        Some(t) if t < t_default => (t, 1.0),
        _ => (t_default, no_pr_thres),
    };
    if end < entry_s {
        return Err(Error::Learn(format!("call at {end} precedes ERV entry at {entry_s}")));
    }
    if !(0.0..=1.0).contains(&top) {
        return Err(Error::Learn(format!("label ceiling {top} outside [0, 1]")));
    }
    if end == entry_s {
        return Ok(vec![top]);
    }
    let span = (end - entry_s) as f64;
    (entry_s..=end)
        .map(|t| Ok(top * curve_value(curve, (t - entry_s) as f64 / span)?))
        .collect()
}
