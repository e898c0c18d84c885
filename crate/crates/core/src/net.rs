//! Corridor network, signal timing plans and demand.
//!
//! Intersections are listed in the direction of ERV travel. Every distance is
//! in feet, every time in seconds and every rate in vehicles per hour. The
//! on-disk form is a single JSON document (see `docs/network-schema.md`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FT_PER_MILE: f64 = 5280.0;

pub fn mph_to_fps(mph: f64) -> f64 {
    mph * FT_PER_MILE / 3600.0
}

pub const MAX_SPACING_FT: f64 = 3000.0;
pub const DETECTOR_SETBACK_RANGE_FT: (f64, f64) = (200.0, 500.0);
pub const DEFAULT_CHECKIN_SETBACK_FT: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPlan {
    pub cycle_s: u32,
    pub offset_s: u32,
    pub mainline_green_s: u32,
    pub cross_green_s: u32,
    pub yellow_s: u32,
    pub all_red_s: u32,
    pub min_green_s: u32,
}

impl SignalPlan {
    /// Two-phase plan used by the synthetic testbed: 96 + 52 green with
    /// 4 s yellow and 2 s all-red after each phase.
    pub fn testbed(offset_s: u32) -> Self {
        Self {
            cycle_s: 160,
            offset_s,
            mainline_green_s: 96,
            cross_green_s: 52,
            yellow_s: 4,
            all_red_s: 2,
            min_green_s: 10,
        }
    }

    pub fn clearance_s(&self) -> u32 {
        self.yellow_s + self.all_red_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSpec {
    pub id: String,
    pub position_ft: f64,
    pub advance_detector_setback_ft: f64,
    #[serde(default = "default_checkin")]
    pub checkin_setback_ft: f64,
    pub signal_plan: SignalPlan,
    pub cross_demand_vph: f64,
}

fn default_checkin() -> f64 {
    DEFAULT_CHECKIN_SETBACK_FT
}

/// Immutable corridor description shared by every run.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub intersections: Vec<IntersectionSpec>,
    pub entry_link_length_ft: f64,
    pub exit_link_length_ft: f64,
    pub cross_approach_length_ft: f64,
    pub box_width_ft: f64,
    pub mainline_free_speed_mph: f64,
    pub erv_desired_speed_mph: f64,
    pub erv_caution_speed_mph: f64,
}

impl NetworkSpec {
    pub fn len(&self) -> usize {
        self.intersections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intersections.is_empty()
    }

    pub fn stopbar(&self, i: usize) -> f64 {
        self.intersections[i].position_ft
    }

    /// Length of the ERV path, origin to the end of the exit link.
    pub fn corridor_length_ft(&self) -> f64 {
        self.intersections
            .last()
            .map(|x| x.position_ft)
            .unwrap_or(0.0)
            + self.exit_link_length_ft
    }

    pub fn corridor_miles(&self) -> f64 {
        self.corridor_length_ft() / FT_PER_MILE
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.intersections.iter().position(|x| x.id == id)
    }

    pub fn spacings_ft(&self) -> Vec<f64> {
        self.intersections
            .windows(2)
            .map(|w| w[1].position_ft - w[0].position_ft)
            .collect()
    }

    /// Intersections whose check-in point lies downstream of the corridor
    /// origin. Calls for the others are placed at ERV entry regardless of
    /// strategy, so only these carry a trained model.
    pub fn preemption_intersections(&self) -> Vec<usize> {
        self.intersections
            .iter()
            .enumerate()
            .filter(|(_, x)| x.position_ft - x.checkin_setback_ft > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub mainline_vph: f64,
    pub cross_vph: f64,
    pub warmup_s: u32,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self {
            mainline_vph: 900.0,
            cross_vph: 400.0,
            warmup_s: 900,
        }
    }
}

/// Network plus demand, the content of one config document.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub network: NetworkSpec,
    pub demand: DemandSpec,
}

const TESTBED_SPACINGS_FT: [f64; 7] = [2000.0, 2500.0, 3000.0, 1500.0, 2200.0, 2800.0, 2600.0];
const PROGRESSION_MPH: f64 = 40.0;

/// Eight-signal synthetic corridor with offsets for 40 mph progression.
pub fn default_testbed() -> NetworkSpec {
    let entry = 1000.0;
    let mut positions = vec![entry];
    for s in TESTBED_SPACINGS_FT {
        positions.push(positions.last().unwrap() + s);
    }
    let prog = mph_to_fps(PROGRESSION_MPH);
    let intersections = positions
        .iter()
        .enumerate()
        .map(|(k, &pos)| {
            let travel = ((pos - entry) / prog).round() as u32;
            IntersectionSpec {
                id: format!("I{}", k + 1),
                position_ft: pos,
                advance_detector_setback_ft: 350.0,
                checkin_setback_ft: DEFAULT_CHECKIN_SETBACK_FT,
                signal_plan: SignalPlan::testbed(travel % 160),
                cross_demand_vph: 400.0,
            }
        })
        .collect();
    NetworkSpec {
        intersections,
        entry_link_length_ft: entry,
        exit_link_length_ft: 500.0,
        cross_approach_length_ft: 800.0,
        box_width_ft: 60.0,
        mainline_free_speed_mph: 45.0,
        erv_desired_speed_mph: 50.0,
        erv_caution_speed_mph: 20.0,
    }
}

pub fn default_config() -> Config {
    Config {
        network: default_testbed(),
        demand: DemandSpec::default(),
    }
}

/// Checks every structural rule; an empty list means the spec is usable.
pub fn validate(spec: &NetworkSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.intersections.is_empty() {
        out.push("intersections must not be empty".to_string());
    }
    for w in spec.intersections.windows(2) {
        let gap = w[1].position_ft - w[0].position_ft;
        if gap <= 0.0 {
            out.push(format!(
                "positions not strictly increasing at {} -> {}",
                w[0].id, w[1].id
            ));
        } else if gap > MAX_SPACING_FT {
            out.push(format!(
                "spacing ≤ 3000 ft violated between {} and {} ({gap} ft)",
                w[0].id, w[1].id
            ));
        }
    }
    if let Some(first) = spec.intersections.first() {
        if (first.position_ft - spec.entry_link_length_ft).abs() > 1e-9 {
            out.push(format!(
                "first intersection {} must sit at the end of the entry link",
                first.id
            ));
        }
    }
    for x in &spec.intersections {
        let (lo, hi) = DETECTOR_SETBACK_RANGE_FT;
        if !(lo..=hi).contains(&x.advance_detector_setback_ft) {
            out.push(format!("advance detector outside 200–500 ft at {}", x.id));
        }
        if x.checkin_setback_ft <= 0.0 {
            out.push(format!("check-in setback must be positive at {}", x.id));
        }
        if x.cross_demand_vph < 0.0 || !x.cross_demand_vph.is_finite() {
            out.push(format!("cross demand must be ≥ 0 at {}", x.id));
        }
        let p = &x.signal_plan;
        if p.mainline_green_s + p.cross_green_s + 2 * p.clearance_s() != p.cycle_s {
            out.push(format!("cycle sum mismatch at {}", x.id));
        }
        if p.min_green_s > p.mainline_green_s.min(p.cross_green_s) {
            out.push(format!("min green exceeds a planned green at {}", x.id));
        }
        if p.min_green_s == 0 || p.yellow_s == 0 {
            out.push(format!("min green and yellow must be positive at {}", x.id));
        }
        if p.cycle_s > 0 && p.offset_s >= p.cycle_s {
            out.push(format!("offset must be below cycle length at {}", x.id));
        }
    }
    let speeds = [
        spec.mainline_free_speed_mph,
        spec.erv_desired_speed_mph,
        spec.erv_caution_speed_mph,
    ];
    if speeds.iter().any(|&s| !(s > 0.0)) {
        out.push("all speeds must be > 0".to_string());
    } else if !(spec.erv_caution_speed_mph < spec.mainline_free_speed_mph
        && spec.mainline_free_speed_mph < spec.erv_desired_speed_mph)
    {
        out.push("speed ordering caution < mainline free < ERV desired violated".to_string());
    }
    for (name, v) in [
        ("entry link", spec.entry_link_length_ft),
        ("exit link", spec.exit_link_length_ft),
        ("cross approach", spec.cross_approach_length_ft),
        ("box width", spec.box_width_ft),
    ] {
        if !(v > 0.0) {
            out.push(format!("{name} length must be > 0"));
        }
    }
    out
}

pub fn validate_demand(demand: &DemandSpec) -> Vec<String> {
    let mut out = Vec::new();
    if !(demand.mainline_vph >= 0.0) || !(demand.cross_vph >= 0.0) {
        out.push("demand rates must be ≥ 0".to_string());
    }
    out
}

// On-disk layout. Kept separate from the domain types so the JSON schema can
// group fields the way the documented config does.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorridorDoc {
    entry_link_ft: f64,
    exit_link_ft: f64,
    cross_approach_ft: f64,
    box_width_ft: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeedsDoc {
    mainline_free_mph: f64,
    erv_desired_mph: f64,
    erv_caution_mph: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    corridor: CorridorDoc,
    speeds: SpeedsDoc,
    demand: DemandSpec,
    intersections: Vec<IntersectionSpec>,
}

/// Parses and validates a full config document.
pub fn load_config(text: &str) -> Result<Config> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.intersections.is_empty() {
        return Err(Error::Schema("`intersections` must list at least one intersection".into()));
    }
    let network = NetworkSpec {
        intersections: doc.intersections,
        entry_link_length_ft: doc.corridor.entry_link_ft,
        exit_link_length_ft: doc.corridor.exit_link_ft,
        cross_approach_length_ft: doc.corridor.cross_approach_ft,
        box_width_ft: doc.corridor.box_width_ft,
        mainline_free_speed_mph: doc.speeds.mainline_free_mph,
        erv_desired_speed_mph: doc.speeds.erv_desired_mph,
        erv_caution_speed_mph: doc.speeds.erv_caution_mph,
    };
    let mut violations = validate(&network);
    violations.extend(validate_demand(&doc.demand));
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(Config {
        network,
        demand: doc.demand,
    })
}

pub fn load_network(text: &str) -> Result<NetworkSpec> {
    load_config(text).map(|c| c.network)
}

pub fn to_config_json(config: &Config) -> String {
    let n = &config.network;
    let doc = ConfigDoc {
        corridor: CorridorDoc {
            entry_link_ft: n.entry_link_length_ft,
            exit_link_ft: n.exit_link_length_ft,
            cross_approach_ft: n.cross_approach_length_ft,
            box_width_ft: n.box_width_ft,
        },
        speeds: SpeedsDoc {
            mainline_free_mph: n.mainline_free_speed_mph,
            erv_desired_mph: n.erv_desired_speed_mph,
            erv_caution_mph: n.erv_caution_speed_mph,
        },
        demand: config.demand,
        intersections: n.intersections.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("config serializes")
}
