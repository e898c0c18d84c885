//! Datasets and cross-validated training.

use serde::{Deserialize, Serialize};

use super::features::{SparseRow, Trace, FEATURE_LEN};
use super::labels::{build_labels, Curve, SoftLabelParams};
use super::linear::{Moments, RidgeSolver, Target};
use super::mlp::{self, MlpConfig};
use super::model::{Normalization, Regressor, TrainedModel, TrainingMetadata};
use crate::error::{Error, Result};
use crate::par::par_map;

/// Label family: the curve and the ceiling for scenarios that need no
/// early call. The cutoff does not affect training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub curve: Curve,
    pub no_pr_thres: f64,
}

pub const CUTOFF_GRID: [f64; 4] = [0.90, 0.925, 0.95, 0.98];
pub const NO_PR_THRES_GRID: [f64; 4] = [0.90, 0.925, 0.95, 0.98];
pub const L2_GRID: [f64; 3] = [0.0, 0.1, 1.0];

pub fn label_sets() -> Vec<LabelSet> {
    Curve::ALL
        .iter()
        .flat_map(|&curve| NO_PR_THRES_GRID.iter().map(move |&no_pr_thres| LabelSet { curve, no_pr_thres }))
        .collect()
}

/// One scenario's contribution to an intersection's dataset.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub scenario: usize,
    pub trace: &'a Trace,
    /// Early call second, when one is needed.
    pub t_call: Option<i64>,
}

impl Episode<'_> {
    /// Last second with a training row.
    pub fn t_end(&self) -> i64 {
        match self.t_call {
            Some(t) if t < self.trace.t_default => t,
            _ => self.trace.t_default,
        }
    }

    pub fn labels(&self, ls: LabelSet) -> Result<Vec<f64>> {
        build_labels(self.trace.entry_s, self.trace.t_default, self.t_call, ls.curve, ls.no_pr_thres)
    }
}

/// Rows of one intersection over a set of scenarios, grouped by scenario.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    /// Position of each row's scenario among the episodes.
    pub group: Vec<usize>,
    pub t: Vec<i64>,
    pub scenario: Vec<usize>,
    pub n_groups: usize,
}

impl Dataset {
    pub fn build(episodes: &[Episode<'_>]) -> Self {
        let mut d = Dataset {
            rows: Vec::new(),
            group: Vec::new(),
            t: Vec::new(),
            scenario: Vec::new(),
            n_groups: episodes.len(),
        };
        for (g, e) in episodes.iter().enumerate() {
            for t in e.trace.entry_s..=e.t_end() {
                d.rows.push(e.trace.row(t));
                d.group.push(g);
                d.t.push(t);
                d.scenario.push(e.scenario);
            }
        }
        d
    }

    pub fn labels(episodes: &[Episode<'_>], ls: LabelSet) -> Result<Vec<f64>> {
        let mut y = Vec::new();
        for e in episodes {
            y.extend(e.labels(ls)?);
        }
        Ok(y)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Cross-validation fold of each row: whole scenarios, dealt in order.
    pub fn folds(&self, k: usize) -> Vec<usize> {
        self.group.iter().map(|g| g % k).collect()
    }

    pub fn mean_nnz(&self) -> f64 {
        self.rows.iter().map(|r| r.ones.len() + 2).sum::<usize>() as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub seed: u64,
    pub l2_grid: Vec<f64>,
    pub hidden_grid: Vec<Vec<usize>>,
    pub lr_grid: Vec<f64>,
    pub mlp_epochs: usize,
    pub mlp_batch: usize,
    /// Label family on which MLP hyper-parameters are cross-validated.
    pub mlp_cv_labels: LabelSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 20_240_601,
            l2_grid: L2_GRID.to_vec(),
            hidden_grid: vec![vec![32], vec![64, 32]],
            lr_grid: vec![1e-3, 1e-2],
            mlp_epochs: 6,
            mlp_batch: 64,
            mlp_cv_labels: LabelSet {
                curve: Curve::Linear,
                no_pr_thres: 0.95,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Linear,
    Mlp,
}

fn constant_model(id: &str, ls: LabelSet, y: &[f64], seed: u64) -> TrainedModel {
    log::warn!("all labels equal for {id}; emitting a constant model");
    TrainedModel {
        intersection_id: id.into(),
        regressor: Regressor::Constant { value: y.first().copied().unwrap_or(0.0) },
        params: SoftLabelParams {
            curve: ls.curve,
            cutoff: 1.0,
            no_pr_thres: ls.no_pr_thres,
        },
        feature_normalization: Normalization::identity(FEATURE_LEN),
        training_metadata: TrainingMetadata {
            seed,
            chosen: "constant".into(),
            train_rows: y.len(),
            ..Default::default()
        },
    }
}

fn degenerate(y: &[f64]) -> bool {
    y.windows(2).all(|w| w[0] == w[1])
}

fn params(ls: LabelSet) -> SoftLabelParams {
    SoftLabelParams {
        curve: ls.curve,
        cutoff: 1.0,
        no_pr_thres: ls.no_pr_thres,
    }
}

/// Ridge models for every label family. `l2` is chosen per family by
/// lowest mean validation-fold MSE, then refit on all rows.
pub fn train_linear(id: &str, ds: &Dataset, ys: &[(LabelSet, Vec<f64>)], cfg: &TrainConfig) -> Result<Vec<TrainedModel>> {
    if ds.is_empty() {
        return Err(Error::Learn(format!("empty dataset for {id}")));
    }
    let p = FEATURE_LEN;
    let k = cfg.folds.min(ds.n_groups).max(1);
    let fold = ds.folds(k);
    let mut fm: Vec<Moments> = (0..k).map(|_| Moments::new(p)).collect();
    let mut ft: Vec<Vec<Target>> = (0..k).map(|_| ys.iter().map(|_| Target::new(p)).collect()).collect();
    for (r, row) in ds.rows.iter().enumerate() {
        fm[fold[r]].add(row);
        for (l, (_, y)) in ys.iter().enumerate() {
            ft[fold[r]][l].add(row, y[r]);
        }
    }
    let mut total = Moments::new(p);
    let mut tt: Vec<Target> = ys.iter().map(|_| Target::new(p)).collect();
    for f in 0..k {
        total.plus(&fm[f]);
        for l in 0..ys.len() {
            tt[l].plus(&ft[f][l]);
        }
    }
    // cv[l2][label] = summed squared error over held-out rows
    let mut cv = vec![vec![0.0; ys.len()]; cfg.l2_grid.len()];
    if k > 1 {
        for (g, &l2) in cfg.l2_grid.iter().enumerate() {
            let per_fold = par_map(&(0..k).collect::<Vec<_>>(), |&f| -> Result<Vec<f64>> {
                let solver = RidgeSolver::new(&total.minus(&fm[f]), l2)?;
                let mut sse = vec![0.0; ys.len()];
                for (l, (_, y)) in ys.iter().enumerate() {
                    let fit = solver.solve(&tt[l].minus(&ft[f][l]));
                    for (r, row) in ds.rows.iter().enumerate() {
                        if fold[r] == f {
                            sse[l] += (fit.predict(row) - y[r]).powi(2);
                        }
                    }
                }
                Ok(sse)
            });
            for sse in per_fold {
                for (l, e) in sse?.into_iter().enumerate() {
                    cv[g][l] += e;
                }
            }
        }
    }
    let n = ds.len() as f64;
    let nnz = ds.mean_nnz();
    let mut solvers: Vec<Option<RidgeSolver>> = cfg.l2_grid.iter().map(|_| None).collect();
    let mut out = Vec::with_capacity(ys.len());
    for (l, (ls, y)) in ys.iter().enumerate() {
        if degenerate(y) {
            out.push(constant_model(id, *ls, y, cfg.seed));
            continue;
        }
        let g = (0..cfg.l2_grid.len())
            .min_by(|&a, &b| cv[a][l].total_cmp(&cv[b][l]))
            .expect("non-empty grid");
        if solvers[g].is_none() {
            solvers[g] = Some(RidgeSolver::new(&total, cfg.l2_grid[g])?);
        }
        let fit = solvers[g].as_ref().expect("built").solve(&tt[l]);
        let train_mse = ds.rows.iter().zip(y).map(|(r, v)| (fit.predict(r) - v).powi(2)).sum::<f64>() / n;
        out.push(TrainedModel {
            intersection_id: id.into(),
            regressor: Regressor::Linear {
                weights: fit.weights,
                bias: fit.bias,
                l2: cfg.l2_grid[g],
            },
            params: params(*ls),
            feature_normalization: fit.norm,
            training_metadata: TrainingMetadata {
                seed: cfg.seed,
                folds: k,
                cv: cfg
                    .l2_grid
                    .iter()
                    .enumerate()
                    .map(|(a, l2)| (format!("l2={l2}"), cv[a][l] / n))
                    .collect(),
                chosen: format!("l2={}", cfg.l2_grid[g]),
                train_rows: ds.len(),
                train_mse,
                train_cost: n * nnz * nnz / 2.0 + (p as f64).powi(3) / 6.0,
            },
        });
    }
    Ok(out)
}

fn mlp_cost(hidden: &[usize], rows: usize, nnz: f64, epochs: usize) -> f64 {
    let mut per = nnz * hidden[0] as f64;
    for w in hidden.windows(2) {
        per += (w[0] * w[1]) as f64;
    }
    per += *hidden.last().unwrap() as f64;
    3.0 * per * rows as f64 * epochs as f64
}

fn mlp_cfg(cfg: &TrainConfig, hidden: &[usize], lr: f64) -> MlpConfig {
    MlpConfig {
        hidden: hidden.to_vec(),
        lr,
        epochs: cfg.mlp_epochs,
        batch: cfg.mlp_batch,
        seed: cfg.seed,
    }
}

/// MLP hyper-parameters by k-fold validation MSE on one label family.
/// Returns `(hidden, lr, table)`.
pub fn mlp_cross_validate(ds: &Dataset, y: &[f64], cfg: &TrainConfig) -> (Vec<usize>, f64, Vec<(String, f64)>) {
    let k = cfg.folds.min(ds.n_groups).max(1);
    let fold = ds.folds(k);
    let grid: Vec<(Vec<usize>, f64)> = cfg
        .hidden_grid
        .iter()
        .flat_map(|h| cfg.lr_grid.iter().map(move |&lr| (h.clone(), lr)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let sse = par_map(&jobs, |&(g, f)| {
        let (tr, va): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&r| k == 1 || fold[r] != f);
        let rows: Vec<&SparseRow> = tr.iter().map(|&r| &ds.rows[r]).collect();
        let ty: Vec<f64> = tr.iter().map(|&r| y[r]).collect();
        let norm = Normalization::fit(FEATURE_LEN, rows.iter().copied());
        let (m, _) = mlp::train_mlp(&rows, &ty, &norm, &mlp_cfg(cfg, &grid[g].0, grid[g].1));
        let vr: Vec<&SparseRow> = va.iter().map(|&r| &ds.rows[r]).collect();
        let vy: Vec<f64> = va.iter().map(|&r| y[r]).collect();
        mlp::mse(&m, &norm, &vr, &vy) * vr.len() as f64
    });
    let n = ds.len() as f64;
    let table: Vec<(String, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, (h, lr))| (format!("hidden={h:?} lr={lr}"), sse[g * k..(g + 1) * k].iter().sum::<f64>() / n))
        .collect();
    let best = (0..grid.len()).min_by(|&a, &b| table[a].1.total_cmp(&table[b].1)).expect("non-empty grid");
    (grid[best].0.clone(), grid[best].1, table)
}

/// MLP models for every label family with the given hyper-parameters.
pub fn train_mlp_sets(
    id: &str,
    ds: &Dataset,
    ys: &[(LabelSet, Vec<f64>)],
    cfg: &TrainConfig,
    hidden: &[usize],
    lr: f64,
    cv: &[(String, f64)],
) -> Result<Vec<TrainedModel>> {
    if ds.is_empty() {
        return Err(Error::Learn(format!("empty dataset for {id}")));
    }
    let rows: Vec<&SparseRow> = ds.rows.iter().collect();
    let norm = Normalization::fit(FEATURE_LEN, rows.iter().copied());
    let k = cfg.folds.min(ds.n_groups).max(1);
    let cost = mlp_cost(hidden, ds.len(), ds.mean_nnz(), cfg.mlp_epochs);
    let fits = par_map(ys, |(ls, y)| {
        if degenerate(y) {
            return constant_model(id, *ls, y, cfg.seed);
        }
        let (m, hist) = mlp::train_mlp(&rows, y, &norm, &mlp_cfg(cfg, hidden, lr));
        TrainedModel {
            intersection_id: id.into(),
            regressor: Regressor::from_mlp(&m),
            params: params(*ls),
            feature_normalization: norm.clone(),
            training_metadata: TrainingMetadata {
                seed: cfg.seed,
                folds: k,
                cv: cv.to_vec(),
                chosen: format!("hidden={hidden:?} lr={lr}"),
                train_rows: ds.len(),
                train_mse: hist.last().copied().unwrap_or(f64::NAN),
                train_cost: cost,
            },
        }
    });
    Ok(fits)
}

/// Trains one regressor family on one label vector with k-fold selection
/// of its hyper-parameters.
pub fn train_regressor(id: &str, ds: &Dataset, ls: LabelSet, y: &[f64], kind: RegressorKind, cfg: &TrainConfig) -> Result<TrainedModel> {
    if y.len() != ds.len() {
        return Err(Error::Learn("label count does not match rows".into()));
    }
    let ys = [(ls, y.to_vec())];
    let mut v = match kind {
        RegressorKind::Linear => train_linear(id, ds, &ys, cfg)?,
        RegressorKind::Mlp => {
            if degenerate(y) {
                return Ok(constant_model(id, ls, y, cfg.seed));
            }
            let (h, lr, table) = mlp_cross_validate(ds, y, cfg);
            train_mlp_sets(id, ds, &ys, cfg, &h, lr, &table)?
        }
    };
    Ok(v.remove(0))
}
