//! Two-phase fixed-time signal controller with preemption.
//!
//! The controller is ticked once per control second. In normal operation the
//! display is read straight off the background plan at the current cycle
//! position. A preempt request drives it to a held mainline green (dwell);
//! releasing the request rejoins the background plan, which never stops
//! running. Yellow and all-red intervals are always served in full, and no
//! green is displayed for less than the minimum green.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::SignalPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Mainline,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    PreemptEntry,
    PreemptDwell,
    PreemptExit,
}

impl Mode {
    pub fn is_preempting(self) -> bool {
        matches!(self, Mode::PreemptEntry | Mode::PreemptDwell)
    }
}

/// One of the six timing intervals of a two-phase cycle, in plan order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interval {
    MainGreen,
    MainYellow,
    MainClear,
    CrossGreen,
    CrossYellow,
    CrossClear,
}

impl Interval {
    const ORDER: [Interval; 6] = [
        Interval::MainGreen,
        Interval::MainYellow,
        Interval::MainClear,
        Interval::CrossGreen,
        Interval::CrossYellow,
        Interval::CrossClear,
    ];

    pub fn length(self, plan: &SignalPlan) -> u32 {
        match self {
            Interval::MainGreen => plan.mainline_green_s,
            Interval::CrossGreen => plan.cross_green_s,
            Interval::MainYellow | Interval::CrossYellow => plan.yellow_s,
            Interval::MainClear | Interval::CrossClear => plan.all_red_s,
        }
    }

    pub fn next(self) -> Interval {
        let k = Self::ORDER.iter().position(|&x| x == self).unwrap();
        Self::ORDER[(k + 1) % 6]
    }

    pub fn is_green(self) -> bool {
        matches!(self, Interval::MainGreen | Interval::CrossGreen)
    }

    fn yellow_of(self) -> Interval {
        match self {
            Interval::MainGreen => Interval::MainYellow,
            _ => Interval::CrossYellow,
        }
    }

    pub fn indications(self) -> Indications {
        use Color::*;
        let (mainline, cross) = match self {
            Interval::MainGreen => (Green, Red),
            Interval::MainYellow => (Yellow, Red),
            Interval::CrossGreen => (Red, Green),
            Interval::CrossYellow => (Red, Yellow),
            Interval::MainClear | Interval::CrossClear => (Red, Red),
        };
        Indications { mainline, cross }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indications {
    pub mainline: Color,
    pub cross: Color,
}

impl Indications {
    pub fn color(&self, phase: Phase) -> Color {
        match phase {
            Phase::Mainline => self.mainline,
            Phase::Cross => self.cross,
        }
    }
}

/// Background interval at a cycle position, with seconds already elapsed in it.
pub fn background(plan: &SignalPlan, cycle_pos: u32) -> (Interval, u32) {
    let mut start = 0;
    for iv in Interval::ORDER {
        let len = iv.length(plan);
        if cycle_pos < start + len {
            return (iv, cycle_pos - start);
        }
        start += len;
    }
    unreachable!("cycle position {cycle_pos} beyond cycle {}", plan.cycle_s)
}

pub fn cycle_position(plan: &SignalPlan, t: i64) -> u32 {
    (t - plan.offset_s as i64).rem_euclid(plan.cycle_s as i64) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub intersection: usize,
    pub plan: SignalPlan,
    pub mode: Mode,
    /// Interval displayed during the current control second.
    pub interval: Interval,
    /// Seconds the current interval has been displayed, this second included.
    pub interval_elapsed_s: u32,
    pub cycle_clock_s: u32,
}

impl ControllerState {
    pub fn new(intersection: usize, plan: SignalPlan, t: i64) -> Self {
        let cycle_clock_s = cycle_position(&plan, t);
        let (interval, el) = background(&plan, cycle_clock_s);
        Self {
            intersection,
            plan,
            mode: Mode::Normal,
            interval,
            interval_elapsed_s: el + 1,
            cycle_clock_s,
        }
    }

    pub fn indications(&self) -> Indications {
        self.interval.indications()
    }

    pub fn active_phase(&self) -> Phase {
        match self.interval {
            Interval::MainGreen | Interval::MainYellow | Interval::MainClear => Phase::Mainline,
            _ => Phase::Cross,
        }
    }

    /// Leaves dwell. The display is unchanged until the next tick.
    pub fn release_preempt(&mut self, t: i64) -> Result<()> {
        if self.mode != Mode::PreemptDwell {
            return Err(Error::Control(format!(
                "release at t={t} for intersection {} outside dwell (mode {:?})",
                self.intersection, self.mode
            )));
        }
        self.mode = Mode::PreemptExit;
        Ok(())
    }

    /// Advances to control second `t` and returns the indications in force
    /// for `[t, t + 1)`.
    pub fn tick(&mut self, t: i64, request_active: bool) -> Indications {
        self.cycle_clock_s = cycle_position(&self.plan, t);
        let bg = background(&self.plan, self.cycle_clock_s);

        if self.mode == Mode::PreemptDwell && !request_active {
            self.release_preempt(t).expect("mode checked");
        }

        let (next, mode) = match self.mode {
            Mode::Normal if !request_active => (bg.0, Mode::Normal),
            Mode::Normal => {
                // What normal operation would show now, then the entry rule.
                let shown = bg.0;
                let el = if shown == self.interval { self.interval_elapsed_s } else { bg.1 };
                self.entry_step(shown, el)
            }
            Mode::PreemptEntry | Mode::PreemptExit if request_active => {
                self.entry_step(self.interval, self.interval_elapsed_s)
            }
            Mode::PreemptDwell => (Interval::MainGreen, Mode::PreemptDwell),
            Mode::PreemptEntry | Mode::PreemptExit => {
                self.exit_step(self.interval, self.interval_elapsed_s, bg)
            }
        };

        if next == self.interval {
            self.interval_elapsed_s += 1;
        } else {
            self.interval = next;
            self.interval_elapsed_s = 1;
        }
        self.mode = mode;
        self.indications()
    }

    /// Entry rule applied to interval `cur` that has been shown `el` seconds.
    fn entry_step(&self, cur: Interval, el: u32) -> (Interval, Mode) {
        let plan = &self.plan;
        match cur {
            Interval::MainGreen => (Interval::MainGreen, Mode::PreemptDwell),
            Interval::CrossGreen if el >= plan.min_green_s => {
                (Interval::CrossYellow, Mode::PreemptEntry)
            }
            Interval::CrossGreen => (Interval::CrossGreen, Mode::PreemptEntry),
            iv if el < iv.length(plan) => (iv, Mode::PreemptEntry),
            // clearance complete: straight to the preempted phase
            Interval::MainYellow => (Interval::MainClear, Mode::PreemptEntry),
            Interval::CrossYellow => (Interval::CrossClear, Mode::PreemptEntry),
            Interval::MainClear | Interval::CrossClear => (Interval::MainGreen, Mode::PreemptDwell),
        }
    }

    /// Recovery toward the background plan after a release.
    fn exit_step(&self, cur: Interval, el: u32, bg: (Interval, u32)) -> (Interval, Mode) {
        let plan = &self.plan;
        if cur.is_green() {
            return self.exit_green(cur, el, bg);
        }
        if el < cur.length(plan) {
            return (cur, Mode::PreemptExit);
        }
        let next = cur.next();
        if next.is_green() {
            self.exit_green(next, 0, bg)
        } else {
            (next, Mode::PreemptExit)
        }
    }

    fn exit_green(&self, green: Interval, el: u32, (bg_iv, bg_el): (Interval, u32)) -> (Interval, Mode) {
        let plan = &self.plan;
        if bg_iv == green {
            let remaining = green.length(plan) - bg_el;
            if el + remaining >= plan.min_green_s {
                return (green, Mode::Normal);
            }
        } else if el >= plan.min_green_s {
            return (green.yellow_of(), Mode::PreemptExit);
        }
        (green, Mode::PreemptExit)
    }
}

/// Result of scanning a signal log for clearance and min-green violations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub yellow_checked: usize,
    pub all_red_checked: usize,
    pub green_checked: usize,
    pub violations: Vec<String>,
}

impl SafetyAudit {
    pub fn assertions(&self) -> usize {
        self.yellow_checked + self.all_red_checked + self.green_checked
    }

    pub fn merge(&mut self, other: SafetyAudit) {
        self.yellow_checked += other.yellow_checked;
        self.all_red_checked += other.all_red_checked;
        self.green_checked += other.green_checked;
        self.violations.extend(other.violations);
    }
}

/// Checks a per-second display sequence `(t, interval)` against the plan.
/// Intervals cut by the start or end of the sequence are not judged.
pub fn audit_intervals(plan: &SignalPlan, seq: &[(i64, Interval)], label: &str) -> SafetyAudit {
    let mut audit = SafetyAudit::default();
    let mut runs: Vec<(Interval, i64, i64)> = Vec::new();
    for &(t, iv) in seq {
        match runs.last_mut() {
            Some((cur, _, end)) if *cur == iv && *end == t => *end = t + 1,
            _ => runs.push((iv, t, t + 1)),
        }
    }
    if runs.len() < 3 {
        return audit;
    }
    for &(iv, start, end) in &runs[1..runs.len() - 1] {
        let dur = (end - start) as u32;
        match iv {
            Interval::MainYellow | Interval::CrossYellow => {
                audit.yellow_checked += 1;
                if dur != plan.yellow_s {
                    audit.violations.push(format!("{label}: {iv:?} lasted {dur}s at t={start}"));
                }
            }
            Interval::MainClear | Interval::CrossClear => {
                audit.all_red_checked += 1;
                if dur != plan.all_red_s {
                    audit.violations.push(format!("{label}: all-red lasted {dur}s at t={start}"));
                }
            }
            Interval::MainGreen | Interval::CrossGreen => {
                audit.green_checked += 1;
                if dur < plan.min_green_s {
                    audit.violations.push(format!("{label}: {iv:?} lasted {dur}s at t={start}"));
                }
            }
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan() -> SignalPlan {
        SignalPlan::testbed(0)
    }

    /// Runs a controller over `[from, to)` with a request schedule and returns
    /// the per-second display.
    fn trace(
        plan: SignalPlan,
        from: i64,
        to: i64,
        request: impl Fn(i64) -> bool,
    ) -> Vec<(i64, Interval, Mode)> {
        let mut c = ControllerState::new(0, plan, from);
        let mut out = vec![(from, c.interval, c.mode)];
        for t in from + 1..to {
            c.tick(t, request(t));
            out.push((t, c.interval, c.mode));
        }
        out
    }

    fn first(tr: &[(i64, Interval, Mode)], pred: impl Fn(Interval, Mode) -> bool) -> i64 {
        tr.iter().find(|(_, iv, m)| pred(*iv, *m)).map(|x| x.0).unwrap()
    }

    #[test]
    fn background_layout() {
        let p = plan();
        assert_eq!(background(&p, 0), (Interval::MainGreen, 0));
        assert_eq!(background(&p, 96), (Interval::MainYellow, 0));
        assert_eq!(background(&p, 100), (Interval::MainClear, 0));
        assert_eq!(background(&p, 102), (Interval::CrossGreen, 0));
        assert_eq!(background(&p, 159), (Interval::CrossClear, 1));
    }

    #[test]
    fn normal_mode_follows_plan() {
        let p = SignalPlan::testbed(37);
        let tr = trace(p, 0, 400, |_| false);
        for (t, iv, m) in tr {
            assert_eq!(m, Mode::Normal);
            assert_eq!(iv, background(&p, cycle_position(&p, t)).0);
        }
    }

    #[test]
    fn yellow_not_shortened_by_request() {
        // mainline yellow covers cycle seconds 96..100; request at 97
        let tr = trace(plan(), 90, 140, |t| t >= 97);
        let yellow: Vec<i64> = tr
            .iter()
            .filter(|x| x.1 == Interval::MainYellow)
            .map(|x| x.0)
            .collect();
        assert_eq!(yellow, vec![96, 97, 98, 99]);
        let clear: Vec<i64> = tr.iter().filter(|x| x.1 == Interval::MainClear).map(|x| x.0).collect();
        assert_eq!(clear, vec![100, 101]);
        assert_eq!(first(&tr, |iv, m| iv == Interval::MainGreen && m == Mode::PreemptDwell), 102);
    }

    #[test]
    fn request_during_mainline_green_dwells_immediately() {
        let tr = trace(plan(), 0, 200, |t| t >= 50);
        assert_eq!(first(&tr, |_, m| m == Mode::PreemptDwell), 50);
        assert!(tr.iter().filter(|x| x.0 >= 50).all(|x| x.1 == Interval::MainGreen));
    }

    #[test]
    fn request_in_cross_green_serves_min_green_then_clearance() {
        // cross green starts at 102; request 5 s in
        let tr = trace(plan(), 0, 200, |t| t >= 107);
        let main_green = first(&tr, |iv, m| iv == Interval::MainGreen && m == Mode::PreemptDwell);
        assert_eq!(main_green - 107, 11);
    }

    #[test]
    fn request_late_in_cross_green_clears_at_once() {
        let tr = trace(plan(), 0, 200, |t| t >= 130);
        assert_eq!(tr.iter().find(|x| x.0 == 130).unwrap().1, Interval::CrossYellow);
        let g = first(&tr, |iv, m| iv == Interval::MainGreen && m == Mode::PreemptDwell);
        assert_eq!(g, 136);
    }

    #[test]
    fn release_with_background_green_returns_to_normal() {
        let tr = trace(plan(), 0, 200, |t| (20..60).contains(&t));
        let at = tr.iter().find(|x| x.0 == 60).unwrap();
        assert_eq!((at.1, at.2), (Interval::MainGreen, Mode::Normal));
    }

    #[test]
    fn release_during_background_cross_green() {
        // dwell from 50 to 130, background is in cross green at 130
        let tr = trace(plan(), 0, 300, |t| (50..130).contains(&t));
        let seq: Vec<Interval> = tr.iter().filter(|x| x.0 >= 130 && x.0 < 137).map(|x| x.1).collect();
        use Interval::*;
        assert_eq!(
            seq,
            vec![MainYellow, MainYellow, MainYellow, MainYellow, MainClear, MainClear, CrossGreen]
        );
        assert_eq!(tr.iter().find(|x| x.0 == 136).unwrap().2, Mode::Normal);
    }

    #[test]
    fn double_release_is_error() {
        let mut c = ControllerState::new(0, plan(), 0);
        c.tick(1, true);
        assert_eq!(c.mode, Mode::PreemptDwell);
        c.release_preempt(2).unwrap();
        assert!(c.release_preempt(2).is_err());
        let mut fresh = ControllerState::new(0, plan(), 0);
        assert!(fresh.release_preempt(0).is_err());
    }

    #[test]
    fn short_dwell_still_serves_min_green() {
        // request at end of cross clearance, released right after dwell starts
        let tr = trace(plan(), 140, 400, |t| (158..=160).contains(&t));
        let seq: Vec<(i64, Interval)> = tr.iter().map(|x| (x.0, x.1)).collect();
        let audit = audit_intervals(&plan(), &seq, "x");
        assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    }

    proptest! {
        #[test]
        fn random_requests_never_violate_clearances(
            offset in 0u32..160,
            windows in proptest::collection::vec((0i64..900, 1i64..200), 0..6),
            min_green in 5u32..30,
        ) {
            let p = SignalPlan { offset_s: offset, min_green_s: min_green, ..SignalPlan::testbed(0) };
            let tr = trace(p, 0, 1200, |t| windows.iter().any(|&(s, d)| t >= s && t < s + d));
            let seq: Vec<(i64, Interval)> = tr.iter().map(|x| (x.0, x.1)).collect();
            let audit = audit_intervals(&p, &seq, "prop");
            prop_assert!(audit.violations.is_empty(), "{:?}", audit.violations);
            for (_, iv, m) in &tr {
                if *m == Mode::PreemptDwell {
                    prop_assert_eq!(*iv, Interval::MainGreen);
                }
                let ind = iv.indications();
                prop_assert!(ind.mainline == Color::Red || ind.cross == Color::Red);
            }
        }

        #[test]
        fn held_request_reaches_green_within_bound(offset in 0u32..160, at in 0i64..400) {
            let p = SignalPlan::testbed(offset);
            let tr = trace(p, 0, 800, |t| t >= at);
            let g = tr.iter().find(|x| x.0 >= at && x.1 == Interval::MainGreen).unwrap().0;
            prop_assert!(g - at <= (p.min_green_s + p.yellow_s + p.all_red_s) as i64);
        }

        #[test]
        fn rejoins_background_within_a_cycle(offset in 0u32..160, at in 0i64..300, dur in 1i64..250) {
            let p = SignalPlan::testbed(offset);
            let tr = trace(p, 0, 1200, |t| t >= at && t < at + dur);
            let normal = tr.iter().find(|x| x.0 >= at + dur && x.2 == Mode::Normal).unwrap().0;
            prop_assert!(normal - (at + dur) <= p.cycle_s as i64);
        }
    }
}
