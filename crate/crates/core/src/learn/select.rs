//! Duration-based scoring of call timing and model selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::features::Trace;
use super::model::{Predictor, Scratch, TrainedModel};
use crate::error::{Error, Result};

/// Seconds a call was early (`fp`), late (`fn_`) and correctly active
/// (`tp`) before the ERV crossed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Durations {
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tp: f64,
}

impl Durations {
    pub fn add(&mut self, o: Durations) {
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tp += o.tp;
    }
}

/// One scenario's confusion durations.
pub fn scenario_durations(t_pred: f64, t_ideal: f64, t_cross: f64) -> Durations {
    Durations {
        fp: (t_ideal - t_pred).max(0.0),
        fn_: (t_pred.min(t_cross) - t_ideal).max(0.0),
        tp: (t_cross - t_pred.max(t_ideal)).max(0.0),
    }
}

/// Sums over `(t_pred, t_ideal, t_cross)` triples.
pub fn confusion_durations(cases: &[(f64, f64, f64)]) -> Durations {
    let mut d = Durations::default();
    for &(p, i, c) in cases {
        d.add(scenario_durations(p, i, c));
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Value(f64),
    Rejected,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Rejected => None,
        }
    }

    /// Lower is better; rejected sorts last.
    pub fn cmp_better(&self, o: &Score) -> Ordering {
        match (self, o) {
            (Score::Value(a), Score::Value(b)) => a.total_cmp(b),
            (Score::Value(_), Score::Rejected) => Ordering::Less,
            (Score::Rejected, Score::Value(_)) => Ordering::Greater,
            (Score::Rejected, Score::Rejected) => Ordering::Equal,
        }
    }
}

/// False negatives weigh ten times false positives, per second of correct
/// call.
pub fn model_score(fp: f64, fn_: f64, tp: f64) -> Score {
    if tp <= 0.0 {
        Score::Rejected
    } else {
        Score::Value((0.1 * fp + fn_) / tp)
    }
}

/// Validation scenario as seen by selection.
#[derive(Debug, Clone)]
pub struct ValidationCase<'a> {
    pub scenario: usize,
    pub trace: &'a Trace,
    pub t_ideal: i64,
    pub t_cross: f64,
}

/// First second in the trace whose prediction exceeds each cutoff, else
/// the trace's default second. One pass serves every cutoff.
pub fn first_exceedances(p: &Predictor, trace: &Trace, cutoffs: &[f64], s: &mut Scratch) -> Vec<i64> {
    let mut out: Vec<Option<i64>> = vec![None; cutoffs.len()];
    for t in trace.entry_s..=trace.t_default {
        let y = p.predict(&trace.row(t), s);
        for (o, &c) in out.iter_mut().zip(cutoffs) {
            if o.is_none() && y > c {
                *o = Some(t);
            }
        }
        if out.iter().all(Option::is_some) {
            break;
        }
    }
    out.into_iter().map(|o| o.unwrap_or(trace.t_default)).collect()
}

/// A trained model paired with a cutoff and its validation outcome.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub model: TrainedModel,
    /// Predicted call second per validation case.
    pub t_pred: Vec<i64>,
    pub durations: Durations,
    pub score: Score,
}

impl Candidate {
    pub fn cost(&self) -> f64 {
        self.model.training_metadata.train_cost
    }
}

/// Candidates for every admissible cutoff of one trained model.
pub fn candidates_for(model: &TrainedModel, cases: &[ValidationCase<'_>], cutoffs: &[f64]) -> Result<Vec<Candidate>> {
    let cut: Vec<f64> = cutoffs
        .iter()
        .copied()
        .filter(|&c| model.params.no_pr_thres <= c)
        .collect();
    if cut.is_empty() {
        return Ok(Vec::new());
    }
    let p = model.predictor()?;
    let mut s = Scratch::default();
    let per_case: Vec<Vec<i64>> = cases.iter().map(|c| first_exceedances(&p, c.trace, &cut, &mut s)).collect();
    Ok(cut
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let t_pred: Vec<i64> = per_case.iter().map(|v| v[k]).collect();
            let triples: Vec<(f64, f64, f64)> = cases
                .iter()
                .zip(&t_pred)
                .map(|(v, &t)| (t as f64, v.t_ideal as f64, v.t_cross))
                .collect();
            let d = confusion_durations(&triples);
            let mut m = model.clone();
            m.params.cutoff = c;
            Candidate {
                model: m,
                t_pred,
                durations: d,
                score: model_score(d.fp, d.fn_, d.tp),
            }
        })
        .collect())
}

/// Lowest score; ties go to the lower training cost, then to the lower
/// `delay` (computed only for candidates still tied), then to the earlier
/// candidate.
pub fn select_model(cands: &[Candidate], mut delay: impl FnMut(&Candidate) -> Result<f64>) -> Result<usize> {
    let best = cands
        .iter()
        .map(|c| c.score)
        .min_by(|a, b| a.cmp_better(b))
        .ok_or_else(|| Error::Learn("no candidate models".into()))?;
    if best == Score::Rejected {
        return Err(Error::Learn("every candidate has zero true-positive duration".into()));
    }
    let tied: Vec<usize> = (0..cands.len()).filter(|&k| cands[k].score == best).collect();
    let min_cost = tied.iter().map(|&k| cands[k].cost()).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = tied.into_iter().filter(|&k| cands[k].cost() == min_cost).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mut pick = (tied[0], f64::INFINITY);
    for k in tied {
        let d = delay(&cands[k])?;
        if d < pick.1 {
            pick = (k, d);
        }
    }
    Ok(pick.0)
}
