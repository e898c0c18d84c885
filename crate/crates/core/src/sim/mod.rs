//! Seeded discrete-time corridor microsimulation.
//!
//! Dynamics advance in 0.5 s steps; control, detector sampling and policy
//! decisions happen once per whole second. Every approach is a single lane,
//! so nobody overtakes, including the ERV. Car following is a bounded
//! kinematic rule: a vehicle never closes within the jam spacing of the
//! position its leader held at the start of the step, keeps a desired time
//! gap on top of that, and keeps enough room to stop behind the leader's
//! stopping point.

mod arrivals;
mod log;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use arrivals::ArrivalStream;
pub use log::{Event, EventLog};

use crate::control::{Color, ControllerState, Indications, Interval, Phase};
use crate::error::{Error, Result};
use crate::net::{mph_to_fps, DemandSpec, NetworkSpec};

pub const DT: f64 = 0.5;
const STEPS_PER_SECOND: i64 = 2;
/// Length of every per-second history window kept for features.
pub const HISTORY_S: usize = 160;
pub const GUARD_S: i64 = 7200;
pub const POST_EXIT_S: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub accel_fps2: f64,
    pub decel_fps2: f64,
    pub jam_spacing_ft: f64,
    pub vehicle_length_ft: f64,
    pub time_gap_s: f64,
    pub detector_length_ft: f64,
    pub erv_stop_s: f64,
    /// Queue discharge parameters used by the queue-clearance heuristic.
    pub startup_lost_s: f64,
    pub saturation_headway_s: f64,
    pub stopped_speed_fps: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            accel_fps2: 6.0,
            decel_fps2: 10.0,
            jam_spacing_ft: 25.0,
            vehicle_length_ft: 15.0,
            time_gap_s: 1.0,
            detector_length_ft: 6.0,
            erv_stop_s: 2.0,
            startup_lost_s: 2.0,
            saturation_headway_s: 2.0,
            stopped_speed_fps: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    General,
    Erv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "link")]
pub enum Approach {
    Mainline,
    Cross { intersection: usize, side: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub class: VehicleClass,
    pub approach: Approach,
    /// Front bumper, from the corridor origin on the mainline or from the
    /// approach entry on a cross street.
    pub position_ft: f64,
    pub speed_fps: f64,
    pub entry_time_s: f64,
    pub exit_time_s: Option<f64>,
    /// Index of the next stop-bar not yet crossed.
    next_stop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u32,
    pub class: VehicleClass,
    pub approach: Approach,
    pub entry_s: f64,
    pub exit_s: Option<f64>,
}

#[derive(Debug, Clone)]
struct Lane {
    approach: Approach,
    vehicles: VecDeque<VehicleState>,
    arrivals: ArrivalStream,
    desired_fps: f64,
    stopbars: Vec<f64>,
    end_ft: f64,
}

#[derive(Debug, Clone)]
struct ErvState {
    entry_s: i64,
    stopped_s: f64,
    /// Intersection whose red the ERV may now cross at caution speed.
    cleared: Option<usize>,
    crossings: Vec<Option<f64>>,
    checkin_s: Vec<Option<i64>>,
    exit_s: Option<f64>,
    trajectory: Vec<TrajectoryPoint>,
    position_ft: f64,
    speed_fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: i64,
    pub position_ft: f64,
    pub speed_fps: f64,
}

/// Per-second samples at each intersection, indexed by whole second.
///
/// The sample for second `t` holds detector occupancy at `t`, the mainline
/// color displayed over `[t-1, t)` and the preempt request state over
/// `[t-1, t)`; none of them depends on the decision taken at `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub detector: Vec<Vec<u8>>,
    pub signal: Vec<Vec<Color>>,
    pub request: Vec<Vec<u8>>,
}

impl Series {
    fn new(n: usize) -> Self {
        Self {
            detector: vec![Vec::new(); n],
            signal: vec![Vec::new(); n],
            request: vec![Vec::new(); n],
        }
    }
}

/// Everything a policy may look at during one control second.
pub struct SimView<'a> {
    state: &'a SimState,
}

impl<'a> SimView<'a> {
    pub fn t(&self) -> i64 {
        self.state.now()
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.state.net
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.state.dynamics
    }

    pub fn erv_entry_s(&self) -> Option<i64> {
        self.state.erv.as_ref().map(|e| e.entry_s)
    }

    pub fn erv_position_ft(&self) -> Option<f64> {
        self.state.erv.as_ref().filter(|e| e.exit_s.is_none()).map(|e| e.position_ft)
    }

    pub fn erv_speed_fps(&self) -> Option<f64> {
        self.state.erv.as_ref().filter(|e| e.exit_s.is_none()).map(|e| e.speed_fps)
    }

    /// Distance from the ERV front to the stop-bar of `i`, while upstream of it.
    pub fn erv_distance_ft(&self, i: usize) -> Option<f64> {
        let e = self.state.erv.as_ref()?;
        if e.crossings[i].is_some() || e.exit_s.is_some() {
            return None;
        }
        Some((self.state.net.stopbar(i) - e.position_ft).max(0.0))
    }

    pub fn crossed(&self, i: usize) -> bool {
        self.state.erv.as_ref().is_some_and(|e| e.crossings[i].is_some())
    }

    pub fn called(&self, i: usize) -> bool {
        self.state.calls[i].is_some()
    }

    pub fn series(&self) -> &Series {
        &self.state.series
    }

    pub fn queue_count(&self, i: usize) -> usize {
        self.state.queue_count(i)
    }

    pub fn state(&self) -> &SimState {
        self.state
    }
}

/// Decides, once per second while the ERV is in the network, which
/// intersections get a preempt call. A call stays active until the ERV
/// crosses that stop-bar; the simulator handles the release.
pub trait Policy {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()>;
}

/// Never calls.
pub struct NoCalls;

impl Policy for NoCalls {
    fn decide(&mut self, _: &SimView<'_>, _: &mut Vec<usize>) -> Result<()> {
        Ok(())
    }
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        (**self).decide(view, calls)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn decide(&mut self, view: &SimView<'_>, calls: &mut Vec<usize>) -> Result<()> {
        (**self).decide(view, calls)
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub net: Arc<NetworkSpec>,
    pub demand: DemandSpec,
    pub dynamics: Dynamics,
    pub seed: u64,
    step: i64,
    lanes: Vec<Lane>,
    pub controllers: Vec<ControllerState>,
    indications: Vec<Indications>,
    detector: Vec<bool>,
    pub log: EventLog,
    series: Series,
    calls: Vec<Option<i64>>,
    releases: Vec<Option<i64>>,
    active: Vec<bool>,
    preempt_start: Vec<Option<i64>>,
    erv: Option<ErvState>,
    next_id: u32,
    records: Vec<VehicleRecord>,
    entered: usize,
}

pub fn init_sim(net: &NetworkSpec, demand: &DemandSpec, seed: u64) -> SimState {
    SimState::new(Arc::new(net.clone()), *demand, seed, Dynamics::default())
}

impl SimState {
    pub fn new(net: Arc<NetworkSpec>, demand: DemandSpec, seed: u64, dynamics: Dynamics) -> Self {
        let n = net.len();
        let free = mph_to_fps(net.mainline_free_speed_mph);
        let mut lanes = vec![Lane {
            approach: Approach::Mainline,
            vehicles: VecDeque::new(),
            arrivals: ArrivalStream::new(seed, 0, demand.mainline_vph),
            desired_fps: free,
            stopbars: net.intersections.iter().map(|x| x.position_ft).collect(),
            end_ft: net.corridor_length_ft(),
        }];
        for (i, x) in net.intersections.iter().enumerate() {
            for side in 0..2u8 {
                lanes.push(Lane {
                    approach: Approach::Cross { intersection: i, side },
                    vehicles: VecDeque::new(),
                    arrivals: ArrivalStream::new(seed, lanes.len(), x.cross_demand_vph),
                    desired_fps: free,
                    stopbars: vec![net.cross_approach_length_ft],
                    end_ft: cross_exit_ft(&net, &dynamics),
                });
            }
        }
        // Controllers start as if they had run the second before t = 0.
        let controllers: Vec<ControllerState> = net
            .intersections
            .iter()
            .enumerate()
            .map(|(i, x)| ControllerState::new(i, x.signal_plan, -1))
            .collect();
        let indications = controllers.iter().map(|c| c.indications()).collect();
        Self {
            demand,
            dynamics,
            seed,
            step: 0,
            lanes,
            controllers,
            indications,
            detector: vec![false; n],
            log: EventLog::default(),
            series: Series::new(n),
            calls: vec![None; n],
            releases: vec![None; n],
            active: vec![false; n],
            preempt_start: vec![None; n],
            erv: None,
            next_id: 0,
            records: Vec::new(),
            entered: 0,
            net,
        }
    }

    pub fn clock_s(&self) -> f64 {
        self.step as f64 * DT
    }

    /// Current whole second (the clock rounded down).
    pub fn now(&self) -> i64 {
        self.step.div_euclid(STEPS_PER_SECOND)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.lanes.iter().flat_map(|l| l.vehicles.iter())
    }

    pub fn vehicle_count(&self) -> usize {
        self.lanes.iter().map(|l| l.vehicles.len()).sum()
    }

    pub fn entered(&self) -> usize {
        self.entered
    }

    pub fn records(&self) -> &[VehicleRecord] {
        &self.records
    }

    pub fn indications(&self) -> &[Indications] {
        &self.indications
    }

    pub fn detector_occupancy(&self) -> &[bool] {
        &self.detector
    }

    pub fn series(&self) -> &Series {
        &self.series
    }

    pub fn erv_present(&self) -> bool {
        self.erv.as_ref().is_some_and(|e| e.exit_s.is_none())
    }

    pub fn erv_crossing_s(&self, i: usize) -> Option<f64> {
        self.erv.as_ref().and_then(|e| e.crossings[i])
    }

    pub fn erv_checkin_s(&self, i: usize) -> Option<i64> {
        self.erv.as_ref().and_then(|e| e.checkin_s[i])
    }

    pub fn erv_entry_s(&self) -> Option<i64> {
        self.erv.as_ref().map(|e| e.entry_s)
    }

    /// Whole-second ERV samples so far.
    pub fn erv_trajectory(&self) -> &[TrajectoryPoint] {
        self.erv.as_ref().map_or(&[], |e| &e.trajectory)
    }

    pub fn erv_exit_s(&self) -> Option<f64> {
        self.erv.as_ref().and_then(|e| e.exit_s)
    }

    pub fn call_time_s(&self, i: usize) -> Option<i64> {
        self.calls[i]
    }

    pub fn view(&self) -> SimView<'_> {
        SimView { state: self }
    }

    /// Places a general vehicle on the mainline at `position_ft`, for
    /// constructed test situations.
    pub fn place_vehicle(&mut self, position_ft: f64, speed_fps: f64) -> u32 {
        let id = self.alloc_id();
        let lane = &mut self.lanes[0];
        let next_stop = lane.stopbars.iter().take_while(|&&p| p < position_ft).count();
        let v = VehicleState {
            id,
            class: VehicleClass::General,
            approach: Approach::Mainline,
            position_ft,
            speed_fps,
            entry_time_s: self.step as f64 * DT,
            exit_time_s: None,
            next_stop,
        };
        let at = lane
            .vehicles
            .iter()
            .position(|u| u.position_ft < position_ft)
            .unwrap_or(lane.vehicles.len());
        lane.vehicles.insert(at, v);
        self.entered += 1;
        id
    }

    fn alloc_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Stopped general mainline vehicles within 1500 ft upstream of the
    /// stop-bar of `i`.
    pub fn queue_count(&self, i: usize) -> usize {
        let p = self.net.stopbar(i);
        self.lanes[0]
            .vehicles
            .iter()
            .filter(|v| {
                v.class == VehicleClass::General
                    && v.position_ft <= p
                    && v.position_ft >= p - 1500.0
                    && v.speed_fps < self.dynamics.stopped_speed_fps
            })
            .count()
    }

    /// Puts the ERV at the corridor origin at its desired speed.
    pub fn inject_erv(&mut self, entry_time_s: i64) -> Result<()> {
        if self.erv.is_some() {
            return Err(Error::Sim("an ERV is already in this run".into()));
        }
        if self.step != entry_time_s * STEPS_PER_SECOND {
            return Err(Error::Sim(format!(
                "ERV entry at {entry_time_s} s but clock is {} s",
                self.clock_s()
            )));
        }
        let id = self.alloc_id();
        let desired = mph_to_fps(self.net.erv_desired_speed_mph);
        let dyn_ = self.dynamics;
        let lane = &mut self.lanes[0];
        let (pos, speed) = entry_slot(lane.vehicles.back(), desired, &dyn_);
        lane.vehicles.push_back(VehicleState {
            id,
            class: VehicleClass::Erv,
            approach: Approach::Mainline,
            position_ft: pos,
            speed_fps: speed,
            entry_time_s: entry_time_s as f64,
            exit_time_s: None,
            next_stop: 0,
        });
        self.entered += 1;
        let n = self.net.len();
        self.erv = Some(ErvState {
            entry_s: entry_time_s,
            stopped_s: 0.0,
            cleared: None,
            crossings: vec![None; n],
            checkin_s: vec![None; n],
            exit_s: None,
            trajectory: Vec::new(),
            position_ft: pos,
            speed_fps: speed,
        });
        self.log.push(Event::ErvEnter {
            t: entry_time_s,
            vehicle: id,
        });
        Ok(())
    }

    /// One control second: sample, consult the policy, tick every
    /// controller, then two dynamics steps.
    pub fn advance_second(&mut self, policy: &mut dyn Policy) -> Result<()> {
        debug_assert_eq!(self.step % STEPS_PER_SECOND, 0);
        let t = self.now();
        self.sample(t);

        if self.erv_present() {
            let mut fired = Vec::new();
            policy.decide(&self.view(), &mut fired)?;
            for i in fired {
                if i >= self.net.len() {
                    return Err(Error::Policy(format!("call for unknown intersection {i}")));
                }
                if self.calls[i].is_none() && !self.view().crossed(i) {
                    self.calls[i] = Some(t);
                    self.log.push(Event::PreemptCall { t, intersection: i });
                }
            }
        }
        for i in 0..self.net.len() {
            let want = self.calls[i].is_some() && !self.view().crossed(i);
            if self.active[i] && !want {
                self.releases[i] = Some(t);
                self.log.push(Event::PreemptRelease { t, intersection: i });
            }
            self.active[i] = want;
        }
        self.tick_controllers(t);
        self.step_dynamics();
        self.step_dynamics();
        Ok(())
    }

    fn sample(&mut self, t: i64) {
        for i in 0..self.net.len() {
            self.series.detector[i].push(self.detector[i] as u8);
            self.series.signal[i].push(self.indications[i].mainline);
            self.series.request[i].push(self.active[i] as u8);
        }
        debug_assert_eq!(self.series.detector[0].len() as i64, t + 1);
        if let Some(e) = self.erv.as_mut().filter(|e| e.exit_s.is_none()) {
            let p = TrajectoryPoint {
                t,
                position_ft: e.position_ft,
                speed_fps: e.speed_fps,
            };
            e.trajectory.push(p);
            self.log.push(Event::ErvSample {
                t,
                position_ft: p.position_ft,
                speed_fps: p.speed_fps,
            });
            for (i, x) in self.net.intersections.iter().enumerate() {
                if e.checkin_s[i].is_none()
                    && e.crossings[i].is_none()
                    && x.position_ft - e.position_ft <= x.checkin_setback_ft
                {
                    e.checkin_s[i] = Some(t);
                }
            }
        }
    }

    fn tick_controllers(&mut self, t: i64) {
        for i in 0..self.controllers.len() {
            let before = (self.controllers[i].indications(), self.controllers[i].mode);
            let ind = self.controllers[i].tick(t, self.active[i]);
            let mode = self.controllers[i].mode;
            self.indications[i] = ind;
            if mode.is_preempting() && self.preempt_start[i].is_none() && self.calls[i].is_some() {
                self.preempt_start[i] = Some(t);
            }
            let mut changed = false;
            for phase in [Phase::Mainline, Phase::Cross] {
                // the first tick logs the starting display
                if t == 0 || ind.color(phase) != before.0.color(phase) {
                    changed = true;
                    self.log.push(Event::Signal {
                        t,
                        intersection: i,
                        phase,
                        color: ind.color(phase),
                        mode,
                    });
                }
            }
            if !changed && mode != before.1 {
                self.log.push(Event::Signal {
                    t,
                    intersection: i,
                    phase: Phase::Mainline,
                    color: ind.mainline,
                    mode,
                });
            }
        }
    }

    /// Sets every indication and advances one 0.5 s step, bypassing the
    /// controllers. Used to drive constructed situations.
    pub fn step(&mut self, indications: &[Indications]) {
        assert_eq!(indications.len(), self.net.len(), "indication per intersection");
        self.indications.copy_from_slice(indications);
        self.step_dynamics();
    }

    fn step_dynamics(&mut self) {
        let t_new = (self.step + 1) as f64 * DT;
        let dyn_ = self.dynamics;
        let net = Arc::clone(&self.net);
        let caution = mph_to_fps(net.erv_caution_speed_mph);
        let erv_desired = mph_to_fps(net.erv_desired_speed_mph);
        let box_end = net.box_width_ft + dyn_.vehicle_length_ft;

        // Cross traffic holds while the ERV crosses on red.
        let erv_box = self.erv.as_ref().and_then(|e| {
            let j = e.cleared?;
            (e.exit_s.is_none() && e.position_ft <= net.stopbar(j) + box_end).then_some(j)
        });
        let box_clear: Vec<bool> = (0..net.len())
            .map(|i| {
                let lc = net.cross_approach_length_ft;
                self.lanes[1 + 2 * i..3 + 2 * i].iter().all(|l| {
                    l.vehicles
                        .iter()
                        .all(|v| v.position_ft <= lc || v.position_ft > lc + box_end)
                })
            })
            .collect();

        let mut erv_events: Vec<Event> = Vec::new();
        for (k, lane) in self.lanes.iter_mut().enumerate() {
            let mut leader: Option<(f64, f64)> = None;
            let mut exited = 0;
            for v in lane.vehicles.iter_mut() {
                let old = (v.position_ft, v.speed_fps);
                let is_erv = v.class == VehicleClass::Erv;
                let desired = if is_erv { erv_desired } else { lane.desired_fps };
                let mut vmax = (v.speed_fps + dyn_.accel_fps2 * DT).min(desired);

                if let Some((lx, lv)) = leader {
                    let gap = lx - dyn_.jam_spacing_ft - v.position_ft;
                    vmax = vmax
                        .min(gap.max(0.0) / (DT + dyn_.time_gap_s))
                        .min(safe_speed(gap, lv, dyn_.decel_fps2));
                }

                // Stop-bar of the next intersection ahead.
                let mut stopping_at_line = false;
                if v.next_stop < lane.stopbars.len() {
                    let p = lane.stopbars[v.next_stop];
                    let color = match lane.approach {
                        Approach::Mainline => self.indications[v.next_stop].mainline,
                        Approach::Cross { intersection, .. } => {
                            if erv_box == Some(intersection) {
                                Color::Red
                            } else {
                                self.indications[intersection].cross
                            }
                        }
                    };
                    let erv_cleared = is_erv
                        && self.erv.as_ref().is_some_and(|e| e.cleared == Some(v.next_stop));
                    let dist = p - v.position_ft;
                    let can_stop =
                        v.speed_fps * v.speed_fps / (2.0 * dyn_.decel_fps2) <= dist + 1e-9;
                    if color != Color::Green && !erv_cleared && can_stop {
                        vmax = vmax.min(dist.max(0.0) / DT).min(safe_speed(dist, 0.0, dyn_.decel_fps2));
                        stopping_at_line = true;
                    }
                }
                if is_erv {
                    if let Some(e) = self.erv.as_ref() {
                        if let Some(j) = e.cleared {
                            if v.position_ft <= net.stopbar(j) + box_end {
                                vmax = vmax.min(caution);
                            }
                        }
                    }
                }

                let speed = vmax.max(0.0);
                v.speed_fps = speed;
                v.position_ft += speed * DT;

                if is_erv {
                    let e = self.erv.as_mut().expect("erv state");
                    if stopping_at_line
                        && speed == 0.0
                        && lane.stopbars[v.next_stop] - v.position_ft < 1.0
                    {
                        e.stopped_s += DT;
                        if e.stopped_s >= dyn_.erv_stop_s - 1e-9 && box_clear[v.next_stop] {
                            e.cleared = Some(v.next_stop);
                        }
                    } else {
                        e.stopped_s = 0.0;
                    }
                }

                while v.next_stop < lane.stopbars.len()
                    && v.position_ft > lane.stopbars[v.next_stop]
                {
                    if is_erv && k == 0 {
                        let e = self.erv.as_mut().expect("erv state");
                        e.crossings[v.next_stop] = Some(t_new);
                        e.stopped_s = 0.0;
                        erv_events.push(Event::ErvStopbar {
                            t: t_new,
                            intersection: v.next_stop,
                        });
                    }
                    v.next_stop += 1;
                }
                if is_erv {
                    let e = self.erv.as_mut().expect("erv state");
                    e.position_ft = v.position_ft;
                    e.speed_fps = v.speed_fps;
                }
                if v.position_ft > lane.end_ft {
                    v.exit_time_s = Some(t_new);
                    exited += 1;
                }
                leader = Some(old);
            }

            for _ in 0..exited {
                // leaders exit first, so exits are always at the front
                let v = lane.vehicles.pop_front().expect("exited vehicle");
                debug_assert!(v.exit_time_s.is_some());
                if v.class == VehicleClass::Erv {
                    let e = self.erv.as_mut().expect("erv state");
                    e.exit_s = v.exit_time_s;
                    erv_events.push(Event::ErvExit {
                        t: t_new,
                        vehicle: v.id,
                    });
                }
                self.records.push(VehicleRecord {
                    id: v.id,
                    class: v.class,
                    approach: v.approach,
                    entry_s: v.entry_time_s,
                    exit_s: v.exit_time_s,
                });
            }
        }
        for e in erv_events {
            self.log.push(e);
        }

        self.step += 1;
        self.spawn(t_new);
        if self.step % STEPS_PER_SECOND == 0 {
            self.sample_detectors();
        }
    }

    fn spawn(&mut self, t: f64) {
        for k in 0..self.lanes.len() {
            let n = self.lanes[k].arrivals.take_until(t);
            for _ in 0..n {
                let id = self.alloc_id();
                let lane = &mut self.lanes[k];
                let (pos, speed) = entry_slot(lane.vehicles.back(), lane.desired_fps, &self.dynamics);
                lane.vehicles.push_back(VehicleState {
                    id,
                    class: VehicleClass::General,
                    approach: lane.approach,
                    position_ft: pos,
                    speed_fps: speed,
                    entry_time_s: t,
                    exit_time_s: None,
                    next_stop: 0,
                });
                self.entered += 1;
            }
        }
    }

    fn sample_detectors(&mut self) {
        let t = self.now();
        let len = self.dynamics.vehicle_length_ft;
        for (i, x) in self.net.intersections.iter().enumerate() {
            let z0 = x.position_ft - x.advance_detector_setback_ft;
            let z1 = z0 + self.dynamics.detector_length_ft;
            let occ = self.lanes[0]
                .vehicles
                .iter()
                .any(|v| v.position_ft >= z0 && v.position_ft - len <= z1);
            if occ != self.detector[i] {
                self.detector[i] = occ;
                self.log.push(Event::Detector {
                    t,
                    intersection: i,
                    occupied: occ,
                });
            }
        }
    }

    /// Runs control seconds with no ERV until the clock reaches `until_s`.
    pub fn run_until(&mut self, until_s: i64, policy: &mut dyn Policy) -> Result<()> {
        while self.now() < until_s {
            self.advance_second(policy)?;
        }
        Ok(())
    }

    pub fn result(&self) -> Result<RunResult> {
        let e = self
            .erv
            .as_ref()
            .ok_or_else(|| Error::Sim("no ERV in this run".into()))?;
        let exit = e
            .exit_s
            .ok_or_else(|| Error::Sim("ERV has not left the corridor".into()))?;
        let intersections = (0..self.net.len())
            .map(|i| {
                let duration = match (self.preempt_start[i], self.releases[i]) {
                    (Some(s), Some(r)) => (r - s).max(0) as f64,
                    _ => 0.0,
                };
                IntersectionOutcome {
                    id: self.net.intersections[i].id.clone(),
                    call_time_s: self.calls[i],
                    checkin_s: e.checkin_s[i],
                    stopbar_cross_s: e.crossings[i].unwrap_or(f64::NAN),
                    preempt_start_s: self.preempt_start[i],
                    release_s: self.releases[i],
                    preempt_duration_s: duration,
                }
            })
            .collect();
        let mut records = self.records.clone();
        records.extend(self.vehicles().map(|v| VehicleRecord {
            id: v.id,
            class: v.class,
            approach: v.approach,
            entry_s: v.entry_time_s,
            exit_s: None,
        }));
        records.sort_by_key(|r| r.id);
        Ok(RunResult {
            seed: self.seed,
            erv_entry_s: e.entry_s as f64,
            erv_exit_s: exit,
            intersections,
            erv_trajectory: e.trajectory.clone(),
            vehicles_entered: self.entered,
            vehicles_present: self.vehicle_count(),
            vehicle_records: records,
            end_s: self.clock_s(),
            event_log: self.log.clone(),
        })
    }
}

/// Where a new arrival can be placed behind the current tail of a lane.
fn entry_slot(tail: Option<&VehicleState>, desired: f64, d: &Dynamics) -> (f64, f64) {
    match tail {
        None => (0.0, desired),
        Some(t) => {
            let pos = (t.position_ft - d.jam_spacing_ft).min(0.0);
            let room = t.position_ft - d.jam_spacing_ft - pos;
            let speed = desired.min(room / (DT + d.time_gap_s)).min(t.speed_fps.max(room / (DT + d.time_gap_s)));
            (pos, speed.max(0.0))
        }
    }
}

/// Largest speed for the coming step that still lets the vehicle stop
/// within `gap` plus the leader's own braking distance.
fn safe_speed(gap: f64, leader_speed: f64, decel: f64) -> f64 {
    let room = gap + leader_speed * leader_speed / (2.0 * decel);
    if room <= 0.0 {
        return 0.0;
    }
    decel * (-DT + (DT * DT + 2.0 * room / decel).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionOutcome {
    pub id: String,
    pub call_time_s: Option<i64>,
    pub checkin_s: Option<i64>,
    pub stopbar_cross_s: f64,
    pub preempt_start_s: Option<i64>,
    pub release_s: Option<i64>,
    pub preempt_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub erv_entry_s: f64,
    pub erv_exit_s: f64,
    pub intersections: Vec<IntersectionOutcome>,
    pub erv_trajectory: Vec<TrajectoryPoint>,
    pub vehicles_entered: usize,
    pub vehicles_present: usize,
    pub vehicle_records: Vec<VehicleRecord>,
    pub end_s: f64,
    #[serde(skip)]
    pub event_log: EventLog,
}

impl RunResult {
    pub fn erv_travel_time_s(&self) -> f64 {
        self.erv_exit_s - self.erv_entry_s
    }

    pub fn aggregate_preempt_s(&self) -> f64 {
        self.intersections.iter().map(|x| x.preempt_duration_s).sum()
    }

    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("t,position_ft,speed_fps\n");
        for p in &self.erv_trajectory {
            s.push_str(&format!("{},{:.3},{:.3}\n", p.t, p.position_ft, p.speed_fps));
        }
        s
    }
}

/// Distance a cross-street vehicle covers from entry to exit.
pub fn cross_exit_ft(net: &NetworkSpec, d: &Dynamics) -> f64 {
    net.cross_approach_length_ft + net.box_width_ft + d.vehicle_length_ft + 50.0
}

/// When a scenario run may stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopAt {
    /// `POST_EXIT_S` after the ERV leaves the corridor.
    AfterExit,
    /// As soon as the ERV crosses the stop-bar of this intersection.
    Crossing(usize),
}

/// A warmed-up state paired with its scenario inputs, ready to inject the ERV.
pub fn warm_up(net: &Arc<NetworkSpec>, demand: &DemandSpec, seed: u64, until_s: i64) -> Result<SimState> {
    let mut s = SimState::new(Arc::clone(net), *demand, seed, Dynamics::default());
    s.run_until(until_s, &mut NoCalls)?;
    Ok(s)
}

/// Injects the ERV into a state whose clock sits at its entry second and
/// runs until `stop`.
pub fn run_from(mut state: SimState, entry_s: i64, policy: &mut dyn Policy, stop: StopAt) -> Result<SimState> {
    state.inject_erv(entry_s)?;
    loop {
        let t = state.now();
        if t - entry_s > GUARD_S {
            return Err(Error::Sim(format!(
                "run exceeded the {GUARD_S} s guard after ERV entry at {entry_s}"
            )));
        }
        match stop {
            StopAt::Crossing(i) if state.erv_crossing_s(i).is_some() => return Ok(state),
            StopAt::AfterExit => {
                if let Some(x) = state.erv_exit_s() {
                    if state.clock_s() >= x + POST_EXIT_S as f64 {
                        return Ok(state);
                    }
                }
            }
            _ => {}
        }
        state.advance_second(policy)?;
    }
}

pub fn run_scenario(
    net: &NetworkSpec,
    demand: &DemandSpec,
    seed: u64,
    erv_entry_s: i64,
    policy: &mut dyn Policy,
) -> Result<RunResult> {
    if erv_entry_s < demand.warmup_s as i64 {
        return Err(Error::Sim(format!(
            "ERV entry {erv_entry_s} s precedes the {} s warm-up",
            demand.warmup_s
        )));
    }
    let net = Arc::new(net.clone());
    let state = warm_up(&net, demand, seed, erv_entry_s)?;
    run_from(state, erv_entry_s, policy, StopAt::AfterExit)?.result()
}

/// Rebuilds the per-second display of one controller from signal events.
pub fn intervals_from_log(log: &EventLog, intersection: usize, end_s: i64) -> Vec<(i64, Interval)> {
    let mut main = None;
    let mut cross = None;
    let mut out = Vec::new();
    let mut events = log
        .events()
        .iter()
        .filter_map(|e| match *e {
            Event::Signal {
                t,
                intersection: i,
                phase,
                color,
                ..
            } if i == intersection => Some((t, phase, color)),
            _ => None,
        })
        .peekable();
    let mut last_main_active = true;
    for t in 0..end_s {
        while let Some(&(te, phase, color)) = events.peek() {
            if te > t {
                break;
            }
            match phase {
                Phase::Mainline => main = Some(color),
                Phase::Cross => cross = Some(color),
            }
            events.next();
        }
        let (Some(m), Some(c)) = (main, cross) else {
            continue;
        };
        let iv = match (m, c) {
            (Color::Green, _) => Interval::MainGreen,
            (Color::Yellow, _) => Interval::MainYellow,
            (_, Color::Green) => Interval::CrossGreen,
            (_, Color::Yellow) => Interval::CrossYellow,
            _ if last_main_active => Interval::MainClear,
            _ => Interval::CrossClear,
        };
        last_main_active = matches!(iv, Interval::MainGreen | Interval::MainYellow | Interval::MainClear);
        out.push((t, iv));
    }
    out
}

#[cfg(test)]
mod tests;
