//! Run metrics, paired strategy comparison, report files and the real-time
//! benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{io_err, Error, Result};
use crate::learn::{CorridorPolicy, ScenarioDescriptor};
use crate::net::{mph_to_fps, DemandSpec, NetworkSpec};
use crate::par::par_map;
use crate::sim::{
    cross_exit_ft, run_from, warm_up, Approach, Dynamics, NoCalls, Policy, RunResult, StopAt, VehicleClass, POST_EXIT_S,
};
use crate::strategies::{CallSchedule, DpPolicy, MlevpPolicy, Strategy, StrategyKind};

/// Horizon after each preemption event over which side-street vehicles are
/// counted.
pub const SIDE_WINDOW_S: f64 = 300.0;

/// Published mean ERV speeds (mph) for the six setups, from a calibrated
/// VISSIM corridor; reference only.
pub const PUBLISHED_SPEED_MPH: [(StrategyKind, f64); 6] = [
    (StrategyKind::NoEvp, 31.4),
    (StrategyKind::Cico, 34.4),
    (StrategyKind::Dp, 39.3),
    (StrategyKind::Optimal, 43.4),
    (StrategyKind::Ideal, 41.6),
    (StrategyKind::Mlevp, 42.5),
];
pub const PUBLISHED_LABEL: &str = "published reference (VISSIM/PIB, not directly comparable)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub erv_travel_time_s: f64,
    pub erv_avg_speed_mph: f64,
    pub preempt_duration_s: Vec<f64>,
    pub aggregate_preempt_s: f64,
    pub mainline_travel_mean_s: f64,
    pub mainline_travel_median_s: f64,
    pub mainline_count: usize,
    pub sidestreet_delay_s: f64,
    pub sidestreet_count: usize,
    pub call_times_s: Vec<Option<i64>>,
}

/// Scalar metrics that reports summarize and plot.
pub const METRICS: [&str; 5] = [
    "erv_travel_time_s",
    "erv_avg_speed_mph",
    "aggregate_preempt_s",
    "mainline_travel_mean_s",
    "sidestreet_delay_s",
];

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "erv_travel_time_s" => self.erv_travel_time_s,
            "erv_avg_speed_mph" => self.erv_avg_speed_mph,
            "aggregate_preempt_s" => self.aggregate_preempt_s,
            "mainline_travel_mean_s" => self.mainline_travel_mean_s,
            "mainline_travel_median_s" => self.mainline_travel_median_s,
            "sidestreet_delay_s" => self.sidestreet_delay_s,
            _ => return None,
        })
    }
}

/// Linear-interpolated quantile of ascending data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (x - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Reference second of side-street counting at `i`: the call second, or the
/// ERV crossing when no call was placed.
fn side_reference(r: &RunResult, i: usize) -> f64 {
    let x = &r.intersections[i];
    x.call_time_s.map(|t| t as f64).unwrap_or(x.stopbar_cross_s)
}

/// Delays of cross-street vehicles at `i` that entered within the window
/// after the reference second and left the network.
pub fn sidestreet_delays(r: &RunResult, net: &NetworkSpec, i: usize) -> Vec<f64> {
    let free = cross_exit_ft(net, &Dynamics::default()) / mph_to_fps(net.mainline_free_speed_mph);
    let t0 = side_reference(r, i);
    r.vehicle_records
        .iter()
        .filter(|v| matches!(v.approach, Approach::Cross { intersection, .. } if intersection == i))
        .filter(|v| v.entry_s >= t0 && v.entry_s <= t0 + SIDE_WINDOW_S)
        .filter_map(|v| v.exit_s.map(|x| (x - v.entry_s - free).max(0.0)))
        .collect()
}

pub fn compute_metrics(r: &RunResult, net: &NetworkSpec) -> Result<Metrics> {
    if !r.erv_exit_s.is_finite() || r.erv_trajectory.is_empty() || r.intersections.len() != net.len() {
        return Err(Error::Metrics("run has an incomplete ERV trajectory".into()));
    }
    let tt = r.erv_travel_time_s();
    if tt <= 0.0 {
        return Err(Error::Metrics("non-positive ERV travel time".into()));
    }
    let (w0, w1) = (r.erv_entry_s, r.erv_exit_s + POST_EXIT_S as f64);
    let mut main: Vec<f64> = r
        .vehicle_records
        .iter()
        .filter(|v| v.class == VehicleClass::General && v.approach == Approach::Mainline)
        .filter_map(|v| v.exit_s.map(|x| (v.entry_s, x)))
        .filter(|&(a, b)| a <= w1 && b >= w0)
        .map(|(a, b)| b - a)
        .collect();
    main.sort_by(f64::total_cmp);
    let side: Vec<f64> = (0..net.len()).flat_map(|i| sidestreet_delays(r, net, i)).collect();
    let pre: Vec<f64> = r.intersections.iter().map(|x| x.preempt_duration_s).collect();
    Ok(Metrics {
        erv_travel_time_s: tt,
        erv_avg_speed_mph: net.corridor_miles() / (tt / 3600.0),
        aggregate_preempt_s: pre.iter().sum(),
        preempt_duration_s: pre,
        mainline_travel_mean_s: mean(&main),
        mainline_travel_median_s: quantile(&main, 0.5),
        mainline_count: main.len(),
        sidestreet_delay_s: mean(&side),
        sidestreet_count: side.len(),
        call_times_s: r.intersections.iter().map(|x| x.call_time_s).collect(),
    })
}

/// A test scenario with its precomputed schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonScenario {
    pub desc: ScenarioDescriptor,
    pub optimal: CallSchedule,
    pub ideal: CallSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub strategy: StrategyKind,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: mean(&v),
            median: quantile(&v, 0.5),
            p25: quantile(&v, 0.25),
            p75: quantile(&v, 0.75),
            min: v.first().copied().unwrap_or(f64::NAN),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Paired difference `a - b` of one metric over shared scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub mean_diff: f64,
    pub a_lower: usize,
    pub b_lower: usize,
    pub equal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub strategies: Vec<StrategyKind>,
    pub scenarios: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn values(&self, s: StrategyKind, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.strategy == s)
            .filter_map(|r| r.metrics.get(metric))
            .collect()
    }

    pub fn summary(&self, s: StrategyKind, metric: &str) -> Summary {
        Summary::of(&self.values(s, metric))
    }

    pub fn mean(&self, s: StrategyKind, metric: &str) -> f64 {
        mean(&self.values(s, metric))
    }

    pub fn paired(&self, a: StrategyKind, b: StrategyKind, metric: &str) -> Paired {
        let (va, vb) = (self.values(a, metric), self.values(b, metric));
        let mut p = Paired {
            mean_diff: 0.0,
            a_lower: 0,
            b_lower: 0,
            equal: 0,
        };
        for (x, y) in va.iter().zip(&vb) {
            p.mean_diff += x - y;
            match x.total_cmp(y) {
                std::cmp::Ordering::Less => p.a_lower += 1,
                std::cmp::Ordering::Greater => p.b_lower += 1,
                std::cmp::Ordering::Equal => p.equal += 1,
            }
        }
        p.mean_diff /= va.len().max(1) as f64;
        p
    }
}

fn strategy_for<'a>(
    kind: StrategyKind,
    sc: &ComparisonScenario,
    corridor: Option<&'a CorridorPolicy>,
) -> Result<Strategy<'a>> {
    Ok(match kind {
        StrategyKind::NoEvp => Strategy::NoEvp,
        StrategyKind::Cico => Strategy::Cico,
        StrategyKind::Dp => Strategy::Dp(DpPolicy::default()),
        StrategyKind::Optimal => Strategy::Schedule(sc.optimal.clone()),
        StrategyKind::Ideal => Strategy::Schedule(sc.ideal.clone()),
        StrategyKind::Mlevp => {
            Strategy::Mlevp(corridor.ok_or_else(|| Error::Policy("MLEVP needs a trained corridor policy".into()))?)
        }
    })
}

/// Runs one scenario to completion under `policy`.
pub fn run_scenario_with(
    net: &Arc<NetworkSpec>,
    demand: &DemandSpec,
    desc: &ScenarioDescriptor,
    policy: &mut dyn Policy,
) -> Result<RunResult> {
    let base = warm_up(net, demand, desc.seed, desc.entry_s)?;
    run_from(base, desc.entry_s, policy, StopAt::AfterExit)?.result()
}

/// Every (scenario, strategy) pair with the scenario's own seed, rows in
/// scenario-major order.
pub fn compare_strategies(
    net: &NetworkSpec,
    demand: &DemandSpec,
    scenarios: &[ComparisonScenario],
    strategies: &[StrategyKind],
    corridor: Option<&CorridorPolicy>,
) -> Result<ComparisonReport> {
    if strategies.contains(&StrategyKind::Mlevp) && corridor.is_none() {
        return Err(Error::Policy("MLEVP needs a trained corridor policy".into()));
    }
    let net = Arc::new(net.clone());
    let jobs: Vec<(usize, StrategyKind)> = (0..scenarios.len())
        .flat_map(|k| strategies.iter().map(move |&s| (k, s)))
        .collect();
    let rows = par_map(&jobs, |&(k, kind)| -> Result<ReportRow> {
        let sc = &scenarios[k];
        let strat = strategy_for(kind, sc, corridor)?;
        let mut p = strat.policy(&net)?;
        let r = run_scenario_with(&net, demand, &sc.desc, &mut *p)?;
        Ok(ReportRow {
            scenario: sc.desc.id(),
            strategy: kind,
            metrics: compute_metrics(&r, &net)?,
        })
    });
    Ok(ComparisonReport {
        strategies: strategies.to_vec(),
        scenarios: scenarios.iter().map(|s| s.desc.id()).collect(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

fn f3(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        String::new()
    }
}

pub fn metrics_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("scenario,strategy");
    for m in METRICS {
        write!(s, ",{m}").unwrap();
    }
    s.push_str(",mainline_travel_median_s,mainline_count,sidestreet_count\n");
    for r in &report.rows {
        write!(s, "{},{}", r.scenario, r.strategy.name()).unwrap();
        for m in METRICS {
            write!(s, ",{}", f3(r.metrics.get(m).unwrap_or(f64::NAN))).unwrap();
        }
        writeln!(
            s,
            ",{},{},{}",
            f3(r.metrics.mainline_travel_median_s),
            r.metrics.mainline_count,
            r.metrics.sidestreet_count
        )
        .unwrap();
    }
    s
}

pub fn summary_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("source,strategy,metric,mean,median,p25,p75,min,max\n");
    for &k in &report.strategies {
        for m in METRICS {
            let x = report.summary(k, m);
            writeln!(
                s,
                "simulated,{},{m},{},{},{},{},{},{}",
                k.name(),
                f3(x.mean),
                f3(x.median),
                f3(x.p25),
                f3(x.p75),
                f3(x.min),
                f3(x.max)
            )
            .unwrap();
        }
    }
    for (k, v) in PUBLISHED_SPEED_MPH {
        writeln!(s, "{PUBLISHED_LABEL},{},erv_avg_speed_mph,{v:.1},,,,,", k.name()).unwrap();
    }
    s
}

pub fn paired_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("metric,a,b,mean_diff,a_lower,b_lower,equal\n");
    for m in ["erv_travel_time_s", "aggregate_preempt_s", "sidestreet_delay_s"] {
        for (x, &a) in report.strategies.iter().enumerate() {
            for &b in &report.strategies[x + 1..] {
                let p = report.paired(a, b, m);
                writeln!(s, "{m},{},{},{},{},{},{}", a.name(), b.name(), f3(p.mean_diff), p.a_lower, p.b_lower, p.equal)
                    .unwrap();
            }
        }
    }
    s
}

/// Box plot of one metric: median line, quartile box and min/max whiskers
/// per strategy.
pub fn box_plot_svg(report: &ComparisonReport, metric: &str) -> String {
    let (w, h, left, top, bottom) = (120.0 * report.strategies.len() as f64 + 80.0, 360.0, 70.0, 30.0, 50.0);
    let sums: Vec<Summary> = report.strategies.iter().map(|&k| report.summary(k, metric)).collect();
    let lo = sums.iter().map(|s| s.min).filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = sums.iter().map(|s| s.max).filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else if lo.is_finite() {
        (lo - 1.0, lo + 1.0)
    } else {
        (0.0, 1.0)
    };
    let plot_h = h - top - bottom;
    let y = |v: f64| top + (hi - v) / (hi - lo) * plot_h;
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w:.0}\" height=\"{h:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\">{metric}</text>", w / 2.0).unwrap();
    writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.2}\" stroke=\"black\"/>",
        top + plot_h
    )
    .unwrap();
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            left - 6.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    for (k, (sum, kind)) in sums.iter().zip(&report.strategies).enumerate() {
        let cx = left + 60.0 + 120.0 * k as f64;
        writeln!(s, "<g class=\"box\" id=\"{}\">", kind.name()).unwrap();
        if sum.mean.is_finite() {
            writeln!(
                s,
                "<line x1=\"{cx:.1}\" y1=\"{:.2}\" x2=\"{cx:.1}\" y2=\"{:.2}\" stroke=\"black\"/>",
                y(sum.max),
                y(sum.min)
            )
            .unwrap();
            writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.2}\" width=\"50\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>",
                cx - 25.0,
                y(sum.p75),
                (y(sum.p25) - y(sum.p75)).max(0.5)
            )
            .unwrap();
            writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{:.2}\" x2=\"{:.1}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - 25.0,
                y(sum.median),
                cx + 25.0,
                y(sum.median)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            h - bottom + 20.0,
            kind.label()
        )
        .unwrap();
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the CSV tables and one SVG per metric into `dir`.
pub fn render_report(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Metrics("empty comparison report".into()));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    files.insert("metrics.csv".into(), metrics_csv(report));
    files.insert("summary.csv".into(), summary_csv(report));
    files.insert("paired.csv".into(), paired_csv(report));
    for m in METRICS {
        files.insert(format!("{m}.svg"), box_plot_svg(report, m));
    }
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(io_err(&p))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub factor: f64,
    pub inference_ms_p50: f64,
    pub inference_ms_p99: f64,
}

pub const BENCH_WINDOW_S: i64 = 300;

/// Simulated seconds per wall-clock second over a window that starts at
/// ERV entry, with the per-second prediction latency when MLEVP drives.
pub fn bench_realtime(
    net: &NetworkSpec,
    demand: &DemandSpec,
    desc: &ScenarioDescriptor,
    corridor: Option<&CorridorPolicy>,
) -> Result<BenchResult> {
    let net = Arc::new(net.clone());
    let mut st = warm_up(&net, demand, desc.seed, desc.entry_s)?;
    st.inject_erv(desc.entry_s)?;
    let mut ml = corridor.map(|c| MlevpPolicy::new(c, &net)).transpose()?;
    if let Some(m) = ml.as_mut() {
        m.timings = Some(Vec::with_capacity(BENCH_WINDOW_S as usize));
    }
    let w = Stopwatch::start();
    for _ in 0..BENCH_WINDOW_S {
        match ml.as_mut() {
            Some(m) => st.advance_second(m)?,
            None => st.advance_second(&mut NoCalls)?,
        }
    }
    let secs = w.elapsed_ns() as f64 / 1e9;
    let mut lat: Vec<f64> = ml
        .and_then(|m| m.timings)
        .unwrap_or_default()
        .into_iter()
        .map(|ns| ns as f64 / 1e6)
        .collect();
    lat.sort_by(f64::total_cmp);
    Ok(BenchResult {
        factor: if secs > 0.0 { BENCH_WINDOW_S as f64 / secs } else { f64::INFINITY },
        inference_ms_p50: if lat.is_empty() { 0.0 } else { quantile(&lat, 0.5) },
        inference_ms_p99: if lat.is_empty() { 0.0 } else { quantile(&lat, 0.99) },
    })
}
