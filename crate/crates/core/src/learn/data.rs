//! The training campaign: scenario descriptors, call searches with traces,
//! the scenario split and dataset export.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{Trace, FEATURE_LEN};
use super::train::{Episode, LabelSet};
use crate::control::audit_intervals;
use crate::error::{Error, Result};
use crate::net::{DemandSpec, NetworkSpec};
use crate::par::par_map;
use crate::sim::{intervals_from_log, run_from, warm_up, StopAt};
use crate::strategies::{call_search, CallSchedule, SchedulePolicy, SearchOutcome, IDEAL_MARGIN_S};

pub const ENTRY_STEP_S: i64 = 5;
pub const ENTRY_COUNT: i64 = 32;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub seed: u64,
    pub entry_s: i64,
    pub offset_s: i64,
}

impl ScenarioDescriptor {
    pub fn id(&self) -> String {
        format!("s{}-e{}", self.seed, self.entry_s)
    }
}

/// First ERV entry second: warm-up end plus a five-second settling margin.
pub fn anchor_s(demand: &DemandSpec) -> i64 {
    demand.warmup_s as i64 + 5
}

/// 32 entry offsets across one 160 s cycle for each of the five seeds.
pub fn scenario_descriptors(demand: &DemandSpec) -> Vec<ScenarioDescriptor> {
    let a = anchor_s(demand);
    SEEDS
        .iter()
        .flat_map(|&seed| {
            (0..ENTRY_COUNT).map(move |k| ScenarioDescriptor {
                seed,
                entry_s: a + k * ENTRY_STEP_S,
                offset_s: k * ENTRY_STEP_S,
            })
        })
        .collect()
}

/// Whole-run figures of one schedule, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub travel_time_s: f64,
    pub crossings_s: Vec<f64>,
    pub aggregate_preempt_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditTotals {
    pub runs: usize,
    pub assertions: usize,
    pub violations: Vec<String>,
}

impl AuditTotals {
    pub fn merge(&mut self, o: &AuditTotals) {
        self.runs += o.runs;
        self.assertions += o.assertions;
        self.violations.extend(o.violations.iter().cloned());
    }
}

/// One searched scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub desc: ScenarioDescriptor,
    pub search: SearchOutcome,
    /// Model trace per intersection, present for preemption intersections.
    pub traces: Vec<Option<Trace>>,
    pub ideal_run: RunSummary,
    pub optimal_run: RunSummary,
    pub audit: AuditTotals,
}

impl ScenarioRun {
    /// Early call second at `i` under the ideal schedule.
    pub fn t_call(&self, i: usize) -> Option<i64> {
        self.search.ideal.calls[i].at()
    }

    pub fn episode(&self, index: usize, i: usize) -> Option<Episode<'_>> {
        self.traces[i].as_ref().map(|trace| Episode {
            scenario: index,
            trace,
            t_call: self.t_call(i),
        })
    }

    pub fn needed_count(&self, model_ix: &[usize]) -> usize {
        model_ix.iter().filter(|&&i| self.search.needed(i)).count()
    }
}

fn full_run(
    net: &Arc<NetworkSpec>,
    demand: &DemandSpec,
    d: &ScenarioDescriptor,
    sched: &CallSchedule,
    audit: &mut AuditTotals,
) -> Result<RunSummary> {
    let base = warm_up(net, demand, d.seed, d.entry_s)?;
    let mut p = SchedulePolicy { calls: sched.calls.clone() };
    let st = run_from(base, d.entry_s, &mut p, StopAt::AfterExit)?;
    let end = st.now();
    for (i, x) in net.intersections.iter().enumerate() {
        let seq = intervals_from_log(&st.log, i, end);
        let a = audit_intervals(&x.signal_plan, &seq, &format!("{} {}", d.id(), x.id));
        audit.assertions += a.assertions();
        audit.violations.extend(a.violations);
    }
    audit.runs += 1;
    let r = st.result()?;
    Ok(RunSummary {
        travel_time_s: r.erv_travel_time_s(),
        crossings_s: r.intersections.iter().map(|x| x.stopbar_cross_s).collect(),
        aggregate_preempt_s: r.aggregate_preempt_s(),
    })
}

/// Searches one scenario and captures the model traces of the
/// preemption intersections from their default-call probe runs.
pub fn search_scenario(net: &Arc<NetworkSpec>, demand: &DemandSpec, d: &ScenarioDescriptor) -> Result<ScenarioRun> {
    let base = warm_up(net, demand, d.seed, d.entry_s)?;
    let modelled = net.preemption_intersections();
    let mut traces: Vec<Option<Trace>> = vec![None; net.len()];
    let search = call_search(&base, d.entry_s, IDEAL_MARGIN_S, |i, st| {
        if modelled.contains(&i) {
            traces[i] = Some(Trace::from_state(st, i)?);
        }
        Ok(())
    })?;
    drop(base);
    let mut audit = AuditTotals::default();
    let ideal_run = full_run(net, demand, d, &search.ideal, &mut audit)?;
    let optimal_run = full_run(net, demand, d, &search.optimal, &mut audit)?;
    Ok(ScenarioRun {
        desc: *d,
        search,
        traces,
        ideal_run,
        optimal_run,
        audit,
    })
}

/// All 160 scenarios with their ideal schedules, in descriptor order.
pub fn generate_training_runs(net: &NetworkSpec, demand: &DemandSpec) -> Result<Vec<ScenarioRun>> {
    generate_runs_for(net, demand, &scenario_descriptors(demand))
}

pub fn generate_runs_for(net: &NetworkSpec, demand: &DemandSpec, descs: &[ScenarioDescriptor]) -> Result<Vec<ScenarioRun>> {
    let net = Arc::new(net.clone());
    par_map(descs, |d| search_scenario(&net, demand, d)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// 60/20/20 split by whole scenario. Scenarios are ordered by how many
/// intersections need an early call, shuffled within equal counts and dealt
/// in cycles of train, train, train, validation, test, so every subset sees
/// the same mix.
pub fn split_scenarios(needed_counts: &[usize], seed: u64) -> Result<Split> {
    let n = needed_counts.len();
    if n < 5 {
        return Err(Error::Learn(format!("cannot split {n} scenarios into 60/20/20")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&k| needed_counts[k]);
    let mut s = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (pos, k) in order.into_iter().enumerate() {
        match pos % 5 {
            0..=2 => s.train.push(k),
            3 => s.validation.push(k),
            _ => s.test.push(k),
        }
    }
    s.train.sort_unstable();
    s.validation.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}

/// Rows of one intersection as CSV, with their labels.
pub fn dataset_csv(runs: &[ScenarioRun], subset: &[usize], i: usize, id: &str, ls: LabelSet) -> Result<String> {
    let mut s = String::from("scenario_id,intersection_id,t,tau_s,distance_ft");
    for k in 0..160 {
        write!(s, ",d_{k}").unwrap();
    }
    for k in 0..480 {
        write!(s, ",s_{k}").unwrap();
    }
    for k in 0..160 {
        write!(s, ",p_{k}").unwrap();
    }
    s.push_str(",label\n");
    for &k in subset {
        let Some(e) = runs[k].episode(k, i) else { continue };
        let y = e.labels(ls)?;
        for (t, label) in (e.trace.entry_s..=e.t_end()).zip(y) {
            let dense = e.trace.row(t).to_dense();
            debug_assert_eq!(dense.len(), FEATURE_LEN);
            write!(s, "{},{},{}", runs[k].desc.id(), id, t).unwrap();
            for (j, x) in dense.iter().enumerate() {
                if j < 2 {
                    write!(s, ",{x}").unwrap();
                } else {
                    write!(s, ",{}", *x as u8).unwrap();
                }
            }
            writeln!(s, ",{label}").unwrap();
        }
    }
    Ok(s)
}
