//! Campaign to corridor policy: search all scenarios, split, train every
//! candidate per intersection, score on validation and select.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::eval::{run_scenario_with, sidestreet_delays, ComparisonScenario};
use crate::learn::data::AuditTotals;
use crate::learn::select::{candidates_for, Candidate, Durations, Score, ValidationCase};
use crate::learn::train::{label_sets, mlp_cross_validate, train_linear, train_mlp_sets, CUTOFF_GRID};
use crate::learn::{
    generate_runs_for, generate_training_runs, select_model, split_scenarios, CorridorPolicy, Curve, Dataset, Episode, LabelSet,
    RegressorKind, ScenarioDescriptor, ScenarioRun, Split, TrainConfig, TrainedModel,
};
use crate::net::{DemandSpec, NetworkSpec};
use crate::strategies::{CallSchedule, CallTime, SchedulePolicy};

pub const SPLIT_SEED: u64 = 7;

/// The searched scenarios and their split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Campaign {
    pub runs: Vec<ScenarioRun>,
    pub split: Split,
    /// Intersections that get a model.
    pub modelled: Vec<usize>,
}

impl Campaign {
    pub fn generate(net: &NetworkSpec, demand: &DemandSpec, split_seed: u64) -> Result<Self> {
        let runs = generate_training_runs(net, demand)?;
        Self::from_runs(net, runs, split_seed)
    }

    pub fn generate_for(net: &NetworkSpec, demand: &DemandSpec, descs: &[ScenarioDescriptor], split_seed: u64) -> Result<Self> {
        Self::from_runs(net, generate_runs_for(net, demand, descs)?, split_seed)
    }

    pub fn from_runs(net: &NetworkSpec, runs: Vec<ScenarioRun>, split_seed: u64) -> Result<Self> {
        let modelled = net.preemption_intersections();
        let counts: Vec<usize> = runs.iter().map(|r| r.needed_count(&modelled)).collect();
        let split = split_scenarios(&counts, split_seed)?;
        Ok(Self { runs, split, modelled })
    }

    pub fn audit(&self) -> AuditTotals {
        let mut a = AuditTotals::default();
        for r in &self.runs {
            a.merge(&r.audit);
        }
        a
    }

    pub fn episodes(&self, subset: &[usize], i: usize) -> Vec<Episode<'_>> {
        subset.iter().filter_map(|&k| self.runs[k].episode(k, i)).collect()
    }

    pub fn validation_cases(&self, i: usize) -> Vec<ValidationCase<'_>> {
        self.split
            .validation
            .iter()
            .filter_map(|&k| {
                let r = &self.runs[k];
                let s = &r.search.per_intersection[i];
                r.traces[i].as_ref().map(|trace| ValidationCase {
                    scenario: k,
                    trace,
                    t_ideal: s.ideal_s,
                    t_cross: s.ideal_arrival_s,
                })
            })
            .collect()
    }

    pub fn test_scenarios(&self) -> Vec<ComparisonScenario> {
        self.split
            .test
            .iter()
            .map(|&k| {
                let r = &self.runs[k];
                ComparisonScenario {
                    desc: r.desc,
                    optimal: r.search.optimal.clone(),
                    ideal: r.search.ideal.clone(),
                }
            })
            .collect()
    }

    pub fn needed_fraction(&self, subset: &[usize]) -> f64 {
        let (mut n, mut d) = (0usize, 0usize);
        for &k in subset {
            for &i in &self.modelled {
                d += 1;
                if self.runs[k].search.needed(i) {
                    n += 1;
                }
            }
        }
        n as f64 / d.max(1) as f64
    }
}

/// One scored candidate without its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub regressor: String,
    pub curve: Curve,
    pub no_pr_thres: f64,
    pub cutoff: f64,
    pub durations: Durations,
    pub score: Score,
    pub train_cost: f64,
}

impl CandidateRow {
    fn of(c: &Candidate) -> Self {
        Self {
            regressor: c.model.regressor.kind().into(),
            curve: c.model.params.curve,
            no_pr_thres: c.model.params.no_pr_thres,
            cutoff: c.model.params.cutoff,
            durations: c.durations,
            score: c.score,
            train_cost: c.cost(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Shortlisted {
    pub model: TrainedModel,
    pub t_pred: Vec<i64>,
    pub durations: Durations,
}

/// Trained and scored candidates of one intersection. Only the candidates
/// sharing the best score keep their weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionCandidates {
    pub intersection: usize,
    pub id: String,
    pub table: Vec<CandidateRow>,
    pub shortlist: Vec<Shortlisted>,
    pub validation: Vec<usize>,
    pub train_rows: usize,
    #[serde(skip)]
    pub wall_ms: f64,
}

fn label_vectors(eps: &[Episode<'_>]) -> Result<Vec<(LabelSet, Vec<f64>)>> {
    label_sets()
        .into_iter()
        .map(|ls| Ok((ls, Dataset::labels(eps, ls)?)))
        .collect()
}

/// Trains Linear and MLP regressors for every label family at `i` and
/// scores each with every admissible cutoff on the validation scenarios.
pub fn train_intersection(
    camp: &Campaign,
    net: &NetworkSpec,
    i: usize,
    cfg: &TrainConfig,
    kinds: &[RegressorKind],
) -> Result<IntersectionCandidates> {
    let w = Stopwatch::start();
    let id = net.intersections[i].id.clone();
    let eps = camp.episodes(&camp.split.train, i);
    let ds = Dataset::build(&eps);
    if ds.is_empty() {
        return Err(Error::Learn(format!("no training rows for {id}")));
    }
    let ys = label_vectors(&eps)?;
    let mut models = Vec::new();
    if kinds.contains(&RegressorKind::Linear) {
        models.extend(train_linear(&id, &ds, &ys, cfg)?);
    }
    if kinds.contains(&RegressorKind::Mlp) {
        let cv_y = ys
            .iter()
            .find(|(ls, _)| *ls == cfg.mlp_cv_labels)
            .map(|(_, y)| y.clone())
            .unwrap_or_else(|| ys[0].1.clone());
        let (h, lr, table) = mlp_cross_validate(&ds, &cv_y, cfg);
        log::info!("{id}: MLP hyper-parameters hidden={h:?} lr={lr}");
        models.extend(train_mlp_sets(&id, &ds, &ys, cfg, &h, lr, &table)?);
    }
    let cases = camp.validation_cases(i);
    let mut cands = Vec::new();
    for m in &models {
        cands.extend(candidates_for(m, &cases, &CUTOFF_GRID)?);
    }
    let best = cands.iter().map(|c| c.score).min_by(|a, b| a.cmp_better(b));
    let shortlist = cands
        .iter()
        .filter(|c| Some(c.score) == best)
        .map(|c| Shortlisted {
            model: c.model.clone(),
            t_pred: c.t_pred.clone(),
            durations: c.durations,
        })
        .collect();
    Ok(IntersectionCandidates {
        intersection: i,
        id,
        table: cands.iter().map(CandidateRow::of).collect(),
        shortlist,
        validation: cases.iter().map(|c| c.scenario).collect(),
        train_rows: ds.len(),
        wall_ms: w.elapsed_ms(),
    })
}

/// The chosen model of one intersection with its selection evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub intersection: usize,
    pub id: String,
    pub model: TrainedModel,
    pub score: Score,
    pub durations: Durations,
    pub tied: usize,
    pub sidestreet_delay_s: Option<f64>,
}

/// Mean side-street delay at `i` over validation scenarios when `i` calls at
/// the predicted seconds and every other intersection follows its ideal
/// schedule.
pub fn validation_side_delay(
    net: &Arc<NetworkSpec>,
    demand: &DemandSpec,
    camp: &Campaign,
    i: usize,
    scenarios: &[usize],
    t_pred: &[i64],
    memo: &mut BTreeMap<(usize, i64), (f64, usize)>,
) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (&k, &t) in scenarios.iter().zip(t_pred) {
        let e = match memo.get(&(k, t)) {
            Some(&e) => e,
            None => {
                let r = &camp.runs[k];
                let mut calls = r.search.ideal.calls.clone();
                calls[i] = if t == r.search.per_intersection[i].t_default {
                    CallTime::Default
                } else {
                    CallTime::At(t)
                };
                let res = run_scenario_with(net, demand, &r.desc, &mut SchedulePolicy { calls })?;
                let d = sidestreet_delays(&res, net, i);
                let e = (d.iter().sum::<f64>(), d.len());
                memo.insert((k, t), e);
                e
            }
        };
        sum += e.0;
        n += e.1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Picks the final model of one intersection from its scored candidates.
pub fn select_intersection(
    net: &NetworkSpec,
    demand: &DemandSpec,
    camp: &Campaign,
    cands: &IntersectionCandidates,
) -> Result<Selection> {
    let net = Arc::new(net.clone());
    let i = cands.intersection;
    let score = cands
        .table
        .iter()
        .map(|c| c.score)
        .min_by(|a, b| a.cmp_better(b))
        .ok_or_else(|| Error::Learn(format!("no candidates for {}", cands.id)))?;
    let full: Vec<Candidate> = cands
        .shortlist
        .iter()
        .map(|c| Candidate {
            model: c.model.clone(),
            t_pred: c.t_pred.clone(),
            durations: c.durations,
            score,
        })
        .collect();
    let mut memo = BTreeMap::new();
    let mut delays: BTreeMap<usize, f64> = BTreeMap::new();
    let k = select_model(&full, |c| {
        let pos = full.iter().position(|x| std::ptr::eq(x, c)).expect("candidate from list");
        let d = validation_side_delay(&net, demand, camp, i, &cands.validation, &c.t_pred, &mut memo)?;
        delays.insert(pos, d);
        Ok(d)
    })?;
    Ok(Selection {
        intersection: i,
        id: cands.id.clone(),
        model: full[k].model.clone(),
        score,
        durations: full[k].durations,
        tied: full.len(),
        sidestreet_delay_s: delays.get(&k).copied(),
    })
}

/// Trains and selects every modelled intersection.
pub fn train_corridor(
    net: &NetworkSpec,
    demand: &DemandSpec,
    camp: &Campaign,
    cfg: &TrainConfig,
) -> Result<(CorridorPolicy, Vec<Selection>, Vec<IntersectionCandidates>)> {
    let kinds = [RegressorKind::Linear, RegressorKind::Mlp];
    let mut sels = Vec::new();
    let mut all = Vec::new();
    for &i in &camp.modelled {
        let c = train_intersection(camp, net, i, cfg, &kinds)?;
        log::info!("{}: {} candidates in {:.0} ms", c.id, c.table.len(), c.wall_ms);
        sels.push(select_intersection(net, demand, camp, &c)?);
        all.push(c);
    }
    let policy = CorridorPolicy {
        models: sels.iter().map(|s| s.model.clone()).collect(),
    };
    Ok((policy, sels, all))
}

/// Final models in the column layout Intersection | NoPrThres | Curve | Cutoff.
pub fn selection_table(sels: &[Selection]) -> String {
    let mut s = String::from("| Intersection | NoPrThres | Curve | Cutoff |\n|---|---|---|---|\n");
    for x in sels {
        let p = &x.model.params;
        s.push_str(&format!("| {} | {} | {} | {} |\n", x.id, p.no_pr_thres, p.curve, p.cutoff));
    }
    s
}

/// Calls of a schedule as plain seconds, `None` when left on default.
pub fn schedule_seconds(s: &CallSchedule) -> Vec<Option<i64>> {
    s.calls.iter().map(|c| c.at()).collect()
}
