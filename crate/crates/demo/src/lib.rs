//! WebAssembly bindings for the static demo page. Each export returns JSON.

use std::sync::Arc;

use evplab::control::Color;
use evplab::learn::{build_labels, Curve};
use evplab::net::{default_config, NetworkSpec};
use evplab::sim::{run_from, warm_up, Policy, SimView, StopAt};
use evplab::strategies::{CallTime, CicoPolicy, DpPolicy, SchedulePolicy, StrategyKind};
use evplab::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest number of call seconds one objective sweep may probe.
pub const MAX_PROBES: usize = 240;

fn curve_by_name(name: &str) -> Result<Curve> {
    Curve::ALL
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Learn(format!("unknown curve `{name}`")))
}

#[derive(Debug, Serialize)]
pub struct CurveSeries {
    pub curve: &'static str,
    pub t: Vec<i64>,
    pub label: Vec<f64>,
}

/// Soft labels of one episode for every curve, or only `curve` when given.
pub fn label_curves(
    curve: Option<&str>,
    entry_s: i64,
    t_default: i64,
    t_call: Option<i64>,
    no_pr_thres: f64,
) -> Result<Vec<CurveSeries>> {
    let curves = match curve {
        Some(c) => vec![curve_by_name(c)?],
        None => Curve::ALL.to_vec(),
    };
    curves
        .into_iter()
        .map(|c| {
            let label = build_labels(entry_s, t_default, t_call, c, no_pr_thres)?;
            Ok(CurveSeries {
                curve: c.name(),
                t: (entry_s..).take(label.len()).collect(),
                label,
            })
        })
        .collect()
}

/// Records the mainline indication of every intersection each second.
struct Recorder<P> {
    inner: P,
    colors: Vec<Vec<char>>,
}

impl<P: Policy> Policy for Recorder<P> {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        for (row, ind) in self.colors.iter_mut().zip(view.state().indications()) {
            row.push(match ind.mainline {
                Color::Green => 'G',
                Color::Yellow => 'Y',
                Color::Red => 'R',
            });
        }
        self.inner.decide(view, calls)
    }
}

#[derive(Debug, Serialize)]
pub struct TimeSpace {
    pub strategy: &'static str,
    pub entry_s: i64,
    pub travel_time_s: f64,
    pub positions_ft: Vec<f64>,
    pub ids: Vec<String>,
    pub t: Vec<i64>,
    pub erv_ft: Vec<f64>,
    /// One string per intersection, one character per second from entry.
    pub mainline: Vec<String>,
    pub calls_s: Vec<Option<i64>>,
    pub crossings_s: Vec<f64>,
}

fn drive<P: Policy>(net: &Arc<NetworkSpec>, seed: u64, entry_s: i64, inner: P, kind: StrategyKind) -> Result<TimeSpace> {
    let demand = default_config().demand;
    let base = warm_up(net, &demand, seed, entry_s)?;
    let mut rec = Recorder {
        inner,
        colors: vec![Vec::new(); net.len()],
    };
    let st = run_from(base, entry_s, &mut rec, StopAt::AfterExit)?;
    let r = st.result()?;
    let exit = r.erv_exit_s;
    let traj: Vec<_> = r.erv_trajectory.iter().filter(|p| (p.t as f64) <= exit + 1.0).collect();
    let keep = traj.len();
    Ok(TimeSpace {
        strategy: kind.name(),
        entry_s,
        travel_time_s: r.erv_travel_time_s(),
        positions_ft: net.intersections.iter().map(|x| x.position_ft).collect(),
        ids: net.intersections.iter().map(|x| x.id.clone()).collect(),
        t: traj.iter().map(|p| p.t).collect(),
        erv_ft: traj.iter().map(|p| p.position_ft).collect(),
        mainline: rec.colors.iter().map(|c| c.iter().take(keep).collect()).collect(),
        calls_s: (0..net.len()).map(|i| st.call_time_s(i)).collect(),
        crossings_s: r.intersections.iter().map(|x| x.stopbar_cross_s).collect(),
    })
}

/// One ERV run on the default testbed under a rule-based strategy.
pub fn time_space(seed: u64, entry_s: i64, strategy: &str) -> Result<TimeSpace> {
    let net = Arc::new(default_config().network);
    let kind = StrategyKind::parse(strategy).ok_or_else(|| Error::Policy(format!("unknown strategy `{strategy}`")))?;
    match kind {
        StrategyKind::NoEvp => drive(&net, seed, entry_s, evplab::sim::NoCalls, kind),
        StrategyKind::Cico => drive(&net, seed, entry_s, CicoPolicy, kind),
        StrategyKind::Dp => drive(&net, seed, entry_s, DpPolicy::default(), kind),
        _ => Err(Error::Policy(format!("{} is not available in the demo", kind.label()))),
    }
}

#[derive(Debug, Serialize)]
pub struct Objective {
    pub intersection: String,
    pub t_default: i64,
    pub default_crossing_s: f64,
    pub call_s: Vec<i64>,
    pub crossing_s: Vec<f64>,
}

/// Stop-bar crossing time at `i` against the call second, every other
/// intersection left on its default call.
pub fn objective(seed: u64, entry_s: i64, i: usize, stride: i64) -> Result<Objective> {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    if i == 0 || i >= net.len() {
        return Err(Error::Policy(format!("intersection index {i} outside 1..{}", net.len())));
    }
    let stride = stride.max(1);
    let base = warm_up(&net, &cfg.demand, seed, entry_s)?;
    let probe = |c: CallTime| -> Result<evplab::sim::SimState> {
        let mut calls = vec![CallTime::Default; net.len()];
        calls[i] = c;
        run_from(base.clone(), entry_s, &mut SchedulePolicy { calls }, StopAt::Crossing(i))
    };
    let dflt = probe(CallTime::Default)?;
    let t_default = dflt
        .erv_checkin_s(i)
        .ok_or_else(|| Error::Sim("ERV never checked in".into()))?;
    let default_crossing_s = dflt.erv_crossing_s(i).expect("stopped at crossing");
    let call_s: Vec<i64> = (entry_s..t_default).step_by(stride as usize).take(MAX_PROBES).collect();
    let crossing_s = call_s
        .iter()
        .map(|&t| Ok(probe(CallTime::At(t))?.erv_crossing_s(i).expect("stopped at crossing")))
        .collect::<Result<_>>()?;
    Ok(Objective {
        intersection: net.intersections[i].id.clone(),
        t_default,
        default_crossing_s,
        call_s,
        crossing_s,
    })
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?)).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = labelCurves)]
pub fn label_curves_js(entry_s: i32, t_default: i32, t_call: i32, no_pr_thres: f64) -> std::result::Result<String, JsError> {
    let call = (t_call >= 0).then_some(t_call as i64);
    js(label_curves(None, entry_s as i64, t_default as i64, call, no_pr_thres))
}

#[wasm_bindgen(js_name = timeSpace)]
pub fn time_space_js(seed: u32, entry_s: i32, strategy: &str) -> std::result::Result<String, JsError> {
    js(time_space(seed as u64, entry_s as i64, strategy))
}

#[wasm_bindgen(js_name = callObjective)]
pub fn objective_js(seed: u32, entry_s: i32, intersection: u32, stride: i32) -> std::result::Result<String, JsError> {
    js(objective(seed as u64, entry_s as i64, intersection as usize, stride as i64))
}

#[wasm_bindgen(js_name = defaultEntry)]
pub fn default_entry() -> i32 {
    evplab::learn::data::anchor_s(&default_config().demand) as i32
}
