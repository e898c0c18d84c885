//! Per-second model inputs.
//!
//! Layout of the 802 values: `tau_s`, `distance_ft`, 160 detector samples,
//! 160 one-hot signal triples (red, green, yellow) and 160 samples of the
//! adjacent upstream intersection's preempt request. Windows run oldest
//! first and end at the current second.

use serde::{Deserialize, Serialize};

use crate::control::{Color, Phase};
use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::sim::{Event, EventLog, SimState, SimView, HISTORY_S};

pub const WINDOW: usize = HISTORY_S;
pub const FEATURE_LEN: usize = 2 + WINDOW + 3 * WINDOW + WINDOW;
pub const DETECTOR_OFFSET: usize = 2;
pub const SIGNAL_OFFSET: usize = DETECTOR_OFFSET + WINDOW;
pub const PREEMPT_OFFSET: usize = SIGNAL_OFFSET + 3 * WINDOW;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub tau_s: f64,
    pub distance_ft: f64,
    pub detector_hist: Vec<u8>,
    pub signal_hist: Vec<Color>,
    pub upstream_preempt_hist: Vec<u8>,
}

fn color_slot(c: Color) -> usize {
    match c {
        Color::Red => 0,
        Color::Green => 1,
        Color::Yellow => 2,
    }
}

impl FeatureVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_LEN];
        for (k, x) in self.to_sparse().entries() {
            v[k] = x;
        }
        v
    }

    pub fn to_sparse(&self) -> SparseRow {
        SparseRow::from_windows(
            self.tau_s,
            self.distance_ft,
            &self.detector_hist,
            &self.signal_hist,
            &self.upstream_preempt_hist,
        )
    }
}

/// A feature vector as its two continuous values plus the indices of the
/// binary slots that are one, ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub tau_s: f64,
    pub distance_ft: f64,
    pub ones: Vec<u16>,
}

impl SparseRow {
    pub fn from_windows(tau_s: f64, distance_ft: f64, det: &[u8], sig: &[Color], pre: &[u8]) -> Self {
        debug_assert!(det.len() == WINDOW && sig.len() == WINDOW && pre.len() == WINDOW);
        let mut ones = Vec::with_capacity(WINDOW + 32);
        for (k, &d) in det.iter().enumerate() {
            if d != 0 {
                ones.push((DETECTOR_OFFSET + k) as u16);
            }
        }
        for (k, &c) in sig.iter().enumerate() {
            ones.push((SIGNAL_OFFSET + 3 * k + color_slot(c)) as u16);
        }
        for (k, &p) in pre.iter().enumerate() {
            if p != 0 {
                ones.push((PREEMPT_OFFSET + k) as u16);
            }
        }
        Self { tau_s, distance_ft, ones }
    }

    /// Non-zero `(index, value)` pairs, plus both continuous slots.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        [(0, self.tau_s), (1, self.distance_ft)]
            .into_iter()
            .chain(self.ones.iter().map(|&k| (k as usize, 1.0)))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_LEN];
        for (k, x) in self.entries() {
            v[k] = x;
        }
        v
    }

    pub fn to_features(&self) -> FeatureVector {
        let d = self.to_dense();
        let signal_hist = (0..WINDOW)
            .map(|k| {
                let b = SIGNAL_OFFSET + 3 * k;
                if d[b + 1] > 0.0 {
                    Color::Green
                } else if d[b + 2] > 0.0 {
                    Color::Yellow
                } else {
                    Color::Red
                }
            })
            .collect();
        FeatureVector {
            tau_s: d[0],
            distance_ft: d[1],
            detector_hist: d[DETECTOR_OFFSET..SIGNAL_OFFSET].iter().map(|&x| x as u8).collect(),
            signal_hist,
            upstream_preempt_hist: d[PREEMPT_OFFSET..].iter().map(|&x| x as u8).collect(),
        }
    }
}

fn window<T: Copy>(series: &[T], t: i64) -> Result<&[T]> {
    let end = t as usize + 1;
    if t + 1 < WINDOW as i64 || end > series.len() {
        return Err(Error::Learn(format!("no {WINDOW} s history at t={t}")));
    }
    Ok(&series[end - WINDOW..end])
}

const NO_PREEMPT: [u8; WINDOW] = [0; WINDOW];

/// Features for intersection `i` at the current second of a running
/// simulation.
pub fn runtime_features(view: &SimView<'_>, i: usize) -> Result<SparseRow> {
    let entry = view
        .erv_entry_s()
        .ok_or_else(|| Error::Learn("no ERV in the network".into()))?;
    let t = view.t();
    let d = view
        .erv_distance_ft(i)
        .ok_or_else(|| Error::Learn(format!("ERV is past intersection {i}")))?;
    let s = view.series();
    let pre = if i == 0 { &NO_PREEMPT[..] } else { window(&s.request[i - 1], t)? };
    Ok(SparseRow::from_windows(
        (t - entry) as f64,
        d,
        window(&s.detector[i], t)?,
        window(&s.signal[i], t)?,
        pre,
    ))
}

/// History of one intersection as seen by its model, covering every second
/// from ERV entry to the check-in second of an uncalled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub intersection: usize,
    pub entry_s: i64,
    pub t_default: i64,
    start: i64,
    detector: Vec<u8>,
    signal: Vec<Color>,
    upstream: Vec<u8>,
    distance: Vec<f64>,
}

impl Trace {
    /// Captures the trace from a run in which `i` was left uncalled at
    /// least until its check-in second.
    pub fn from_state(state: &SimState, i: usize) -> Result<Self> {
        let entry = state
            .erv_entry_s()
            .ok_or_else(|| Error::Learn("run has no ERV".into()))?;
        let t_default = state
            .erv_checkin_s(i)
            .ok_or_else(|| Error::Learn(format!("ERV never checked in at intersection {i}")))?;
        let start = entry + 1 - WINDOW as i64;
        if start < 0 {
            return Err(Error::Learn("ERV entry precedes the feature window".into()));
        }
        let (a, b) = (start as usize, t_default as usize + 1);
        let s = state.series();
        let stopbar = state.net.stopbar(i);
        let distance = state
            .erv_trajectory()
            .iter()
            .filter(|p| p.t <= t_default)
            .map(|p| (stopbar - p.position_ft).max(0.0))
            .collect::<Vec<_>>();
        debug_assert_eq!(distance.len() as i64, t_default - entry + 1);
        Ok(Self {
            intersection: i,
            entry_s: entry,
            t_default,
            start,
            detector: s.detector[i][a..b].to_vec(),
            signal: s.signal[i][a..b].to_vec(),
            upstream: if i == 0 { vec![0; b - a] } else { s.request[i - 1][a..b].to_vec() },
            distance,
        })
    }

    pub fn len(&self) -> usize {
        self.distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    /// Row for second `t` in `entry_s..=t_default`.
    pub fn row(&self, t: i64) -> SparseRow {
        assert!(t >= self.entry_s && t <= self.t_default, "second {t} outside trace");
        let a = (t - self.start) as usize + 1 - WINDOW;
        let b = a + WINDOW;
        SparseRow::from_windows(
            (t - self.entry_s) as f64,
            self.distance[(t - self.entry_s) as usize],
            &self.detector[a..b],
            &self.signal[a..b],
            &self.upstream[a..b],
        )
    }
}

/// Rebuilds the features of intersection `i` at second `t` from an event
/// log alone.
pub fn extract_features(log: &EventLog, net: &NetworkSpec, i: usize, t: i64) -> Result<FeatureVector> {
    if i >= net.len() {
        return Err(Error::Learn(format!("unknown intersection {i}")));
    }
    let entry = log
        .events()
        .iter()
        .find_map(|e| match *e {
            Event::ErvEnter { t, .. } => Some(t),
            _ => None,
        })
        .ok_or_else(|| Error::Learn("log has no ERV entry".into()))?;
    if t < entry {
        return Err(Error::Learn(format!("t={t} precedes ERV entry at {entry}")));
    }
    let first = t + 1 - WINDOW as i64;
    if first < 1 {
        return Err(Error::Learn(format!("no {WINDOW} s history at t={t}")));
    }
    let ev = log.events();
    let up = i.checked_sub(1);
    let mut det = false;
    let mut color: Option<Color> = None;
    let mut req = false;
    let (mut kd, mut ks) = (0, 0);
    let mut detector_hist = Vec::with_capacity(WINDOW);
    let mut signal_hist = Vec::with_capacity(WINDOW);
    let mut upstream_preempt_hist = Vec::with_capacity(WINDOW);
    // Detector state at s is the last edge at or before s; the display and
    // the request over [s-1, s) come from events at or before s-1.
    for s in first..=t {
        while kd < ev.len() && ev[kd].time() <= s as f64 {
            if let Event::Detector { intersection, occupied, .. } = ev[kd] {
                if intersection == i {
                    det = occupied;
                }
            }
            kd += 1;
        }
        while ks < ev.len() && ev[ks].time() <= (s - 1) as f64 {
            match ev[ks] {
                Event::Signal { intersection, phase: Phase::Mainline, color: c, .. } if intersection == i => {
                    color = Some(c)
                }
                Event::PreemptCall { intersection, .. } if Some(intersection) == up => req = true,
                Event::PreemptRelease { intersection, .. } if Some(intersection) == up => req = false,
                _ => {}
            }
            ks += 1;
        }
        detector_hist.push(det as u8);
        signal_hist.push(color.ok_or_else(|| Error::Learn("signal state unknown".into()))?);
        upstream_preempt_hist.push(req as u8);
    }
    let pos = ev.iter().find_map(|e| match *e {
        Event::ErvSample { t: ts, position_ft, .. } if ts == t => Some(position_ft),
        _ => None,
    });
    let pos = pos.ok_or_else(|| Error::Learn(format!("no ERV sample at t={t}")))?;
    Ok(FeatureVector {
        tau_s: (t - entry) as f64,
        distance_ft: (net.stopbar(i) - pos).max(0.0),
        detector_hist,
        signal_hist,
        upstream_preempt_hist,
    })
}
