//! Preemption call policies and the simulation-in-the-loop call search.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::clock::Stopwatch;
use crate::learn::{runtime_features, CorridorPolicy, Predictor, Scratch};
use crate::net::{mph_to_fps, DemandSpec, NetworkSpec};
use crate::sim::{run_from, warm_up, NoCalls, Policy, SimState, SimView, StopAt};

pub const DP_STARTUP_LOST_S: f64 = 2.0;
pub const DP_HEADWAY_S: f64 = 2.0;
pub const DP_BUFFER_S: f64 = 5.0;
pub const DP_ETA_FLOOR_MPH: f64 = 10.0;
pub const IDEAL_MARGIN_S: f64 = 2.0;
pub const QUEUE_RANGE_FT: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "noevp")]
    NoEvp,
    #[serde(rename = "cico")]
    Cico,
    #[serde(rename = "dp")]
    Dp,
    #[serde(rename = "optimal")]
    Optimal,
    #[serde(rename = "ideal")]
    Ideal,
    #[serde(rename = "mlevp")]
    Mlevp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::NoEvp,
        StrategyKind::Cico,
        StrategyKind::Dp,
        StrategyKind::Optimal,
        StrategyKind::Ideal,
        StrategyKind::Mlevp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::NoEvp => "noevp",
            StrategyKind::Cico => "cico",
            StrategyKind::Dp => "dp",
            StrategyKind::Optimal => "optimal",
            StrategyKind::Ideal => "ideal",
            StrategyKind::Mlevp => "mlevp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::NoEvp => "NoEVP",
            StrategyKind::Cico => "CI-CO",
            StrategyKind::Dp => "DP",
            StrategyKind::Optimal => "Optimal",
            StrategyKind::Ideal => "Ideal",
            StrategyKind::Mlevp => "MLEVP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// When an intersection's call is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallTime {
    At(i64),
    /// When the ERV reaches the check-in point.
    Default,
    None,
}

impl CallTime {
    pub fn at(self) -> Option<i64> {
        match self {
            CallTime::At(t) => Some(t),
            _ => None,
        }
    }

    fn to_json(self) -> Value {
        match self {
            CallTime::At(t) => Value::from(t),
            CallTime::Default => Value::from("default"),
            CallTime::None => Value::from("none"),
        }
    }

    fn from_json(v: &Value) -> Option<Self> {
        match v {
            Value::Number(n) => n.as_i64().map(CallTime::At),
            Value::String(s) if s == "default" => Some(CallTime::Default),
            Value::String(s) if s == "none" => Some(CallTime::None),
            _ => None,
        }
    }
}

/// One call placement per intersection, in corridor order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSchedule {
    pub ids: Vec<String>,
    pub calls: Vec<CallTime>,
}

impl CallSchedule {
    pub fn uniform(net: &NetworkSpec, c: CallTime) -> Self {
        Self {
            ids: net.intersections.iter().map(|x| x.id.clone()).collect(),
            calls: vec![c; net.len()],
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = serde_json::Map::new();
        for (id, c) in self.ids.iter().zip(&self.calls) {
            m.insert(id.clone(), c.to_json());
        }
        Value::Object(m)
    }

    /// Reads a schedule keyed by intersection id; every intersection of
    /// `net` must appear.
    pub fn from_json(v: &Value, net: &NetworkSpec) -> Result<Self> {
        let m = v
            .as_object()
            .ok_or_else(|| Error::Schema("call schedule must be an object".into()))?;
        let mut calls = vec![CallTime::None; net.len()];
        for (k, v) in m {
            let i = net
                .index_of(k)
                .ok_or_else(|| Error::Schema(format!("unknown intersection `{k}` in schedule")))?;
            calls[i] = CallTime::from_json(v)
                .ok_or_else(|| Error::Schema(format!("bad call time for `{k}`: {v}")))?;
        }
        if m.len() != net.len() {
            return Err(Error::Schema("schedule must list every intersection".into()));
        }
        Ok(Self {
            ids: net.intersections.iter().map(|x| x.id.clone()).collect(),
            calls,
        })
    }
}

impl Serialize for CallSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CallSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = Value::deserialize(d)?;
        let m = v.as_object().ok_or_else(|| D::Error::custom("call schedule must be an object"))?;
        let mut out = CallSchedule {
            ids: Vec::with_capacity(m.len()),
            calls: Vec::with_capacity(m.len()),
        };
        for (k, v) in m {
            out.ids.push(k.clone());
            out.calls
                .push(CallTime::from_json(v).ok_or_else(|| D::Error::custom(format!("bad call time for `{k}`")))?);
        }
        Ok(out)
    }
}

/// True once the ERV has reached the check-in point of `i`.
fn checked_in(view: &SimView<'_>, i: usize) -> bool {
    view.state().erv_checkin_s(i).is_some()
}

/// Check-in/check-out: call when the ERV physically reaches the check-in
/// point, release at the stop-bar.
pub struct CicoPolicy;

impl Policy for CicoPolicy {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        for i in 0..view.net().len() {
            if !view.called(i) && !view.crossed(i) && checked_in(view, i) {
                calls.push(i);
            }
        }
        Ok(())
    }
}

/// Stopped mainline vehicles in the 1500 ft upstream of the stop-bar of `i`.
pub fn estimate_queue(view: &SimView<'_>, i: usize) -> usize {
    view.queue_count(i)
}

/// Queue-clearance heuristic: call once the ERV's ETA no longer exceeds
/// the time needed to discharge the standing queue plus a buffer.
#[derive(Debug, Clone, Copy)]
pub struct DpPolicy {
    pub buffer_s: f64,
}

impl Default for DpPolicy {
    fn default() -> Self {
        Self { buffer_s: DP_BUFFER_S }
    }
}

impl DpPolicy {
    pub fn threshold_s(&self, queue: usize) -> f64 {
        DP_STARTUP_LOST_S + queue as f64 * DP_HEADWAY_S + self.buffer_s
    }

    pub fn eta_s(distance_ft: f64, speed_fps: f64) -> f64 {
        distance_ft / speed_fps.max(mph_to_fps(DP_ETA_FLOOR_MPH))
    }
}

impl Policy for DpPolicy {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        let speed = view.erv_speed_fps().unwrap_or(0.0);
        for i in 0..view.net().len() {
            if view.called(i) {
                continue;
            }
            let Some(d) = view.erv_distance_ft(i) else { continue };
            if Self::eta_s(d, speed) <= self.threshold_s(estimate_queue(view, i)) {
                calls.push(i);
            }
        }
        Ok(())
    }
}

/// Places calls from a fixed schedule.
pub struct SchedulePolicy {
    pub calls: Vec<CallTime>,
}

impl Policy for SchedulePolicy {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        let t = view.t();
        for (i, c) in self.calls.iter().enumerate() {
            if view.called(i) || view.crossed(i) {
                continue;
            }
            let fire = match *c {
                CallTime::At(at) => t >= at,
                CallTime::Default => checked_in(view, i),
                CallTime::None => false,
            };
            if fire {
                calls.push(i);
            }
        }
        Ok(())
    }
}

/// Learned call timing. Each modelled intersection fires the first second
/// its predicted necessity score exceeds its cutoff, or at check-in,
/// whichever is earlier; the others fire at check-in.
pub struct MlevpPolicy {
    models: Vec<Option<(Predictor, f64)>>,
    scratch: Scratch,
    /// Wall-clock nanoseconds of each second's predictions, when measured.
    pub timings: Option<Vec<u64>>,
}

impl MlevpPolicy {
    pub fn new(corridor: &CorridorPolicy, net: &NetworkSpec) -> Result<Self> {
        let mut models: Vec<Option<(Predictor, f64)>> = vec![None; net.len()];
        for i in net.preemption_intersections() {
            let id = &net.intersections[i].id;
            let m = corridor
                .model(id)
                .ok_or_else(|| Error::Policy(format!("no model for intersection {id}")))?;
            models[i] = Some((m.predictor()?, m.params.cutoff));
        }
        Ok(Self {
            models,
            scratch: Scratch::default(),
            timings: None,
        })
    }
}

impl Policy for MlevpPolicy {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        let timer = self.timings.as_ref().map(|_| Stopwatch::start());
        for i in 0..view.net().len() {
            if view.called(i) || view.crossed(i) {
                continue;
            }
            if checked_in(view, i) {
                calls.push(i);
                continue;
            }
            if let Some((p, cutoff)) = &self.models[i] {
                let row = runtime_features(view, i)?;
                if p.predict(&row, &mut self.scratch) > *cutoff {
                    calls.push(i);
                }
            }
        }
        if let (Some(t), Some(w)) = (self.timings.as_mut(), timer) {
            t.push(w.elapsed_ns());
        }
        Ok(())
    }
}

/// A policy ready to drive one run.
pub enum Strategy<'a> {
    NoEvp,
    Cico,
    Dp(DpPolicy),
    Schedule(CallSchedule),
    Mlevp(&'a CorridorPolicy),
}

impl Strategy<'_> {
    pub fn policy<'s>(&'s self, net: &NetworkSpec) -> Result<Box<dyn Policy + 's>> {
        Ok(match self {
            Strategy::NoEvp => Box::new(NoCalls),
            Strategy::Cico => Box::new(CicoPolicy),
            Strategy::Dp(p) => Box::new(*p),
            Strategy::Schedule(s) => Box::new(SchedulePolicy { calls: s.calls.clone() }),
            Strategy::Mlevp(c) => Box::new(MlevpPolicy::new(c, net)?),
        })
    }
}

/// Per-intersection outcome of the call search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSearch {
    pub intersection: usize,
    /// Second the ERV reaches check-in when this intersection is left on its
    /// default call.
    pub t_default: i64,
    pub optimal_s: i64,
    pub ideal_s: i64,
    pub min_arrival_s: f64,
    pub optimal_arrival_s: f64,
    pub ideal_arrival_s: f64,
    pub probes: usize,
    pub swept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub entry_s: i64,
    pub optimal: CallSchedule,
    pub ideal: CallSchedule,
    pub per_intersection: Vec<IntersectionSearch>,
}

impl SearchOutcome {
    /// Whether an early call beats the default at `i` under the ideal
    /// schedule.
    pub fn needed(&self, i: usize) -> bool {
        matches!(self.ideal.calls[i], CallTime::At(_))
    }
}

/// Arrival at a stop-bar as a function of one intersection's call second,
/// with every other call held fixed.
struct Objective<'a> {
    base: &'a SimState,
    entry: i64,
    calls: Vec<CallTime>,
    i: usize,
    memo: BTreeMap<i64, f64>,
}

impl Objective<'_> {
    fn run(&self, c: CallTime) -> Result<SimState> {
        let mut calls = self.calls.clone();
        calls[self.i] = c;
        let mut p = SchedulePolicy { calls };
        run_from(self.base.clone(), self.entry, &mut p, StopAt::Crossing(self.i))
    }

    fn eval(&mut self, t: i64) -> Result<f64> {
        if let Some(&f) = self.memo.get(&t) {
            return Ok(f);
        }
        let s = self.run(CallTime::At(t))?;
        let f = s.erv_crossing_s(self.i).expect("run stops at crossing");
        self.memo.insert(t, f);
        Ok(f)
    }

    /// Latest second in `[lo, hi]` whose arrival is at most `target`,
    /// assuming arrival is non-decreasing in the call second and `lo`
    /// qualifies.
    fn latest_within(&mut self, lo: i64, hi: i64, target: f64) -> Result<i64> {
        if self.eval(hi)? <= target {
            return Ok(hi);
        }
        let (mut ok, mut bad) = (lo, hi);
        while bad - ok > 1 {
            let mid = ok + (bad - ok) / 2;
            if self.eval(mid)? <= target {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        Ok(ok)
    }

    fn monotone(&self) -> bool {
        self.memo.values().zip(self.memo.values().skip(1)).all(|(a, b)| a <= b)
    }
}

/// Latest second with the minimum arrival, and latest second within
/// `margin` of it, from a complete table of arrivals by call second.
pub fn latest_minimum(table: &[(i64, f64)], margin: f64) -> (i64, i64) {
    let min = table.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let last = |lim: f64| table.iter().filter(|p| p.1 <= lim).map(|p| p.0).max().expect("non-empty");
    (last(min), last(min + margin))
}

/// Sequential upstream-to-downstream call search for one scenario.
///
/// Each intersection is searched with upstream calls at their strict
/// optima and downstream calls on default. The strict optimum is the latest
/// call second reaching the minimum arrival at that stop-bar; the ideal call
/// is the latest within `margin_s` of that minimum. `on_default` sees the
/// run in which the intersection was left on its default call, stopped at
/// its stop-bar.
pub fn call_search(
    base: &SimState,
    entry_s: i64,
    margin_s: f64,
    mut on_default: impl FnMut(usize, &SimState) -> Result<()>,
) -> Result<SearchOutcome> {
    let net = Arc::clone(&base.net);
    let n = net.len();
    let mut fixed = vec![CallTime::Default; n];
    let mut ideal = vec![CallTime::Default; n];
    let mut per = Vec::with_capacity(n);
    for i in 0..n {
        let mut obj = Objective {
            base,
            entry: entry_s,
            calls: fixed.clone(),
            i,
            memo: BTreeMap::new(),
        };
        let dflt = obj.run(CallTime::Default)?;
        let t_default = dflt
            .erv_checkin_s(i)
            .ok_or_else(|| Error::Sim(format!("ERV crossed intersection {i} without checking in")))?;
        obj.memo.insert(t_default, dflt.erv_crossing_s(i).expect("stopped at crossing"));
        on_default(i, &dflt)?;
        drop(dflt);

        let min = obj.eval(entry_s)?;
        let mut opt = obj.latest_within(entry_s, t_default, min)?;
        let mut idl = obj.latest_within(opt, t_default, min + margin_s)?;
        let mut min_arrival = min;
        let mut swept = false;
        if !obj.monotone() {
            for t in entry_s..=t_default {
                obj.eval(t)?;
            }
            let table: Vec<(i64, f64)> = obj.memo.iter().map(|(&t, &f)| (t, f)).collect();
            (opt, idl) = latest_minimum(&table, margin_s);
            min_arrival = table.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            swept = true;
        }
        let rec = IntersectionSearch {
            intersection: i,
            t_default,
            optimal_s: opt,
            ideal_s: idl,
            min_arrival_s: min_arrival,
            optimal_arrival_s: obj.memo[&opt],
            ideal_arrival_s: obj.memo[&idl],
            probes: obj.memo.len(),
            swept,
        };
        let as_call = |t: i64| if t == t_default { CallTime::Default } else { CallTime::At(t) };
        fixed[i] = as_call(opt);
        ideal[i] = as_call(idl);
        per.push(rec);
    }
    let ids: Vec<String> = net.intersections.iter().map(|x| x.id.clone()).collect();
    Ok(SearchOutcome {
        entry_s,
        optimal: CallSchedule { ids: ids.clone(), calls: fixed },
        ideal: CallSchedule { ids, calls: ideal },
        per_intersection: per,
    })
}

fn warmed(net: &NetworkSpec, demand: &DemandSpec, seed: u64, entry_s: i64) -> Result<SimState> {
    if entry_s < demand.warmup_s as i64 {
        return Err(Error::Sim(format!("ERV entry {entry_s} s precedes the warm-up")));
    }
    warm_up(&Arc::new(net.clone()), demand, seed, entry_s)
}

pub fn optimal_call_search(net: &NetworkSpec, demand: &DemandSpec, seed: u64, entry_s: i64) -> Result<CallSchedule> {
    let base = warmed(net, demand, seed, entry_s)?;
    Ok(call_search(&base, entry_s, 0.0, |_, _| Ok(()))?.optimal)
}

pub fn ideal_call_search(
    net: &NetworkSpec,
    demand: &DemandSpec,
    seed: u64,
    entry_s: i64,
    margin_s: f64,
) -> Result<CallSchedule> {
    if margin_s < 0.0 {
        return Err(Error::Policy("margin must be non-negative".into()));
    }
    let base = warmed(net, demand, seed, entry_s)?;
    Ok(call_search(&base, entry_s, margin_s, |_, _| Ok(()))?.ideal)
}
