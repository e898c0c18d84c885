use std::sync::Arc;

use evplab::control::{Color, Mode, Phase};
use evplab::learn::data::anchor_s;
use evplab::learn::features::SIGNAL_OFFSET;
use evplab::learn::{extract_features, runtime_features, search_scenario, Dataset, ScenarioDescriptor, SparseRow, WINDOW};
use evplab::net::default_config;
use evplab::sim::{run_from, warm_up, Event, EventLog, Policy, SimView, StopAt};
use evplab::strategies::CicoPolicy;
use evplab::Result;

/// CI-CO driver that snapshots every model's runtime features each second.
struct Snapshot {
    inner: CicoPolicy,
    rows: Vec<(i64, usize, SparseRow)>,
}

impl Policy for Snapshot {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        for i in 0..view.net().len() {
            if !view.crossed(i) {
                self.rows.push((view.t(), i, runtime_features(view, i)?));
            }
        }
        self.inner.decide(view, calls)
    }
}

#[test]
fn log_replay_matches_runtime_features() {
    let cfg = default_config();
    let net = Arc::new(cfg.network);
    let entry = anchor_s(&cfg.demand) + 35;
    let base = warm_up(&net, &cfg.demand, 3, entry).unwrap();
    let mut p = Snapshot {
        inner: CicoPolicy,
        rows: Vec::new(),
    };
    let st = run_from(base, entry, &mut p, StopAt::AfterExit).unwrap();
    assert!(p.rows.len() > 500);
    let mut preempt_ones = 0;
    for (t, i, row) in &p.rows {
        let fv = extract_features(&st.log, &net, *i, *t).unwrap();
        assert_eq!(&fv.to_sparse(), row, "t {t} intersection {i}");
        preempt_ones += fv.upstream_preempt_hist.iter().filter(|&&x| x == 1).count();
    }
    assert!(preempt_ones > 0, "upstream preempt history never set");
    let again = extract_features(&st.log, &net, 4, entry + 30).unwrap();
    assert_eq!(again, extract_features(&st.log, &net, 4, entry + 30).unwrap());
}

fn green_log(entry: i64) -> EventLog {
    let mut log = EventLog::default();
    log.push(Event::Signal {
        t: 0,
        intersection: 0,
        phase: Phase::Mainline,
        color: Color::Green,
        mode: Mode::Normal,
    });
    log.push(Event::ErvEnter { t: entry, vehicle: 1 });
    log
}

#[test]
fn entry_second_and_constant_green() {
    let net = default_config().network;
    let mut log = green_log(200);
    log.push(Event::ErvSample {
        t: 200,
        position_ft: 0.0,
        speed_fps: 0.0,
    });
    let fv = extract_features(&log, &net, 0, 200).unwrap();
    assert_eq!(fv.tau_s, 0.0);
    assert_eq!(fv.distance_ft, net.stopbar(0));
    assert_eq!(fv.signal_hist.len(), WINDOW);
    assert!(fv.signal_hist.iter().all(|&c| c == Color::Green));
    let dense = fv.to_dense();
    for k in 0..WINDOW {
        assert_eq!(&dense[SIGNAL_OFFSET + 3 * k..SIGNAL_OFFSET + 3 * k + 3], &[0.0, 1.0, 0.0]);
    }
}

#[test]
fn detector_three_seconds_before_t() {
    let net = default_config().network;
    let mut log = green_log(190);
    log.push(Event::Detector {
        t: 197,
        intersection: 0,
        occupied: true,
    });
    log.push(Event::ErvSample {
        t: 200,
        position_ft: 400.0,
        speed_fps: 70.0,
    });
    log.push(Event::Detector {
        t: 200,
        intersection: 0,
        occupied: false,
    });
    let fv = extract_features(&log, &net, 0, 200).unwrap();
    assert_eq!(fv.tau_s, 10.0);
    assert_eq!(fv.detector_hist.iter().map(|&x| x as usize).sum::<usize>(), 3);
    assert_eq!(&fv.detector_hist[WINDOW - 4..], &[1, 1, 1, 0]);
}

#[test]
fn history_must_cover_the_window() {
    let net = default_config().network;
    let mut log = green_log(100);
    log.push(Event::ErvSample {
        t: 100,
        position_ft: 0.0,
        speed_fps: 0.0,
    });
    assert!(extract_features(&log, &net, 0, 100).is_err());
    assert!(extract_features(&log, &net, 0, 90).is_err());
}

#[test]
fn dataset_rows_stop_at_the_call_second() {
    let cfg = default_config();
    let net = Arc::new(cfg.network.clone());
    let d = ScenarioDescriptor {
        seed: 2,
        entry_s: anchor_s(&cfg.demand) + 60,
        offset_s: 60,
    };
    let run = search_scenario(&net, &cfg.demand, &d).unwrap();
    let mut needed = 0;
    for i in net.preemption_intersections() {
        let e = run.episode(0, i).unwrap();
        let ds = Dataset::build(std::slice::from_ref(&e));
        let rows = ds.rows.len() as i64;
        match e.t_call.filter(|&t| t < e.trace.t_default) {
            Some(t) => {
                needed += 1;
                assert_eq!(rows, t - d.entry_s + 1, "intersection {i}");
            }
            None => assert_eq!(rows, e.trace.t_default - d.entry_s + 1, "intersection {i}"),
        }
        assert_eq!(*ds.t.last().unwrap(), e.t_end());
    }
    assert!(needed > 0);
}
