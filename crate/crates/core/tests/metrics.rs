use std::sync::Arc;

use evplab::eval::{compare_strategies, compute_metrics, render_report, run_scenario_with, ComparisonScenario};
use evplab::learn::data::anchor_s;
use evplab::learn::{
    CorridorPolicy, Curve, Normalization, Regressor, ScenarioDescriptor, SoftLabelParams, TrainedModel, FEATURE_LEN,
};
use evplab::net::default_config;
use evplab::sim::{Event, NoCalls};
use evplab::strategies::{call_search, CicoPolicy, StrategyKind};

fn desc(seed: u64, k: i64) -> ScenarioDescriptor {
    let a = anchor_s(&default_config().demand);
    ScenarioDescriptor {
        seed,
        entry_s: a + 5 * k,
        offset_s: 5 * k,
    }
}

fn scenario(d: ScenarioDescriptor) -> ComparisonScenario {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    let base = evplab::sim::warm_up(&net, &cfg.demand, d.seed, d.entry_s).unwrap();
    let s = call_search(&base, d.entry_s, 2.0, |_, _| Ok(())).unwrap();
    ComparisonScenario {
        desc: d,
        optimal: s.optimal,
        ideal: s.ideal,
    }
}

fn constant_corridor(value: f64) -> CorridorPolicy {
    let net = default_config().network;
    CorridorPolicy {
        models: net
            .preemption_intersections()
            .into_iter()
            .map(|i| TrainedModel {
                intersection_id: net.intersections[i].id.clone(),
                regressor: Regressor::Constant { value },
                params: SoftLabelParams {
                    curve: Curve::Linear,
                    cutoff: 0.9,
                    no_pr_thres: 0.9,
                },
                feature_normalization: Normalization::identity(FEATURE_LEN),
                training_metadata: Default::default(),
            })
            .collect(),
    }
}

#[test]
fn speed_is_corridor_miles_over_hours_and_noevp_never_preempts() {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    let r = run_scenario_with(&net, &cfg.demand, &desc(7, 0), &mut NoCalls).unwrap();
    let m = compute_metrics(&r, &net).unwrap();
    assert_eq!(m.erv_avg_speed_mph, net.corridor_miles() / (m.erv_travel_time_s / 3600.0));
    assert_eq!(m.aggregate_preempt_s, 0.0);
    assert!(m.call_times_s.iter().all(Option::is_none));
    assert!(m.mainline_count > 0 && m.mainline_travel_median_s > 0.0);
    assert_eq!(compute_metrics(&r, &net).unwrap(), m);
}

#[test]
fn aggregate_preempt_matches_logged_request_intervals() {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    let r = run_scenario_with(&net, &cfg.demand, &desc(4, 9), &mut CicoPolicy).unwrap();
    let m = compute_metrics(&r, &net).unwrap();
    let mut from_log = vec![0.0; net.len()];
    let mut open = vec![None; net.len()];
    for e in r.event_log.events() {
        match *e {
            Event::PreemptCall { t, intersection } => open[intersection] = Some(t),
            Event::PreemptRelease { t, intersection } => {
                from_log[intersection] += (t - open[intersection].take().unwrap()) as f64;
            }
            _ => {}
        }
    }
    assert!(open.iter().all(Option::is_none));
    assert_eq!(m.preempt_duration_s, from_log);
    assert_eq!(m.aggregate_preempt_s, from_log.iter().sum::<f64>());
    assert!(m.aggregate_preempt_s > 0.0);
}

#[test]
fn paired_runs_share_background_until_first_call() {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    let d = desc(2, 3);
    let a = run_scenario_with(&net, &cfg.demand, &d, &mut NoCalls).unwrap();
    let b = run_scenario_with(&net, &cfg.demand, &d, &mut CicoPolicy).unwrap();
    let first_call = b
        .event_log
        .events()
        .iter()
        .find_map(|e| match *e {
            Event::PreemptCall { t, .. } => Some(t as f64),
            _ => None,
        })
        .unwrap();
    let before = |r: &evplab::sim::RunResult| -> Vec<Event> {
        r.event_log.events().iter().filter(|e| e.time() < first_call).cloned().collect()
    };
    assert!(before(&a).len() > 1000);
    assert_eq!(before(&a), before(&b));
    let horizon = a.end_s.min(b.end_s) - 60.0;
    let entries = |r: &evplab::sim::RunResult| -> Vec<(u64, u64)> {
        let mut v: Vec<_> = r
            .vehicle_records
            .iter()
            .filter(|v| v.entry_s < horizon)
            .map(|v| (v.entry_s.to_bits(), (v.approach == evplab::sim::Approach::Mainline) as u64))
            .collect();
        v.sort_unstable();
        v
    };
    assert_eq!(entries(&a), entries(&b), "arrival streams differ");
}

#[test]
fn optimal_never_slower_than_noevp() {
    let cfg = default_config();
    let scen: Vec<_> = [(1, 0), (2, 7), (3, 14), (4, 21), (5, 28), (6, 3)]
        .into_iter()
        .map(|(s, k)| scenario(desc(s, k)))
        .collect();
    let rep = compare_strategies(
        &cfg.network,
        &cfg.demand,
        &scen,
        &[StrategyKind::NoEvp, StrategyKind::Optimal],
        None,
    )
    .unwrap();
    let p = rep.paired(StrategyKind::Optimal, StrategyKind::NoEvp, "erv_travel_time_s");
    assert_eq!(p.a_lower + p.equal, scen.len(), "{p:?}");
    assert!(p.mean_diff < 0.0);
}

#[test]
fn report_files_count_rows_and_rerender_identically() {
    let cfg = default_config();
    let scen = vec![scenario(desc(1, 2)), scenario(desc(3, 11))];
    let zero = constant_corridor(0.0);
    let rep = compare_strategies(&cfg.network, &cfg.demand, &scen, &StrategyKind::ALL, Some(&zero)).unwrap();
    assert_eq!(rep.rows.len(), 12);
    let dir = tempfile::tempdir().unwrap();
    let files = render_report(&rep, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    let svg = std::fs::read_to_string(dir.path().join("erv_avg_speed_mph.svg")).unwrap();
    assert_eq!(svg.matches("<g class=\"box\"").count(), 6);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    for mph in ["31.4", "34.4", "39.3", "43.4", "41.6", "42.5"] {
        assert!(summary.contains(mph), "reference {mph} missing");
    }
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let again = tempfile::tempdir().unwrap();
    let files2 = render_report(&rep, again.path()).unwrap();
    let second: Vec<Vec<u8>> = files2.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(first, second);

    let calls = |k| -> Vec<_> { rep.rows.iter().filter(|r| r.strategy == k).map(|r| r.metrics.call_times_s.clone()).collect() };
    assert_eq!(calls(StrategyKind::Mlevp), calls(StrategyKind::Cico), "zero model must fall back to check-in");
}

#[test]
fn always_on_model_calls_every_intersection_at_entry() {
    let cfg = default_config();
    let scen = vec![scenario(desc(5, 6))];
    let one = constant_corridor(1.0);
    let rep = compare_strategies(&cfg.network, &cfg.demand, &scen, &[StrategyKind::Mlevp], Some(&one)).unwrap();
    let calls = &rep.rows[0].metrics.call_times_s;
    assert!(calls.iter().all(|&c| c == Some(scen[0].desc.entry_s)), "{calls:?}");
}
