//! Append-only run event log and its line-delimited JSON form.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{Color, Mode, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// A phase changed color, or the controller changed mode.
    Signal {
        t: i64,
        intersection: usize,
        phase: Phase,
        color: Color,
        mode: Mode,
    },
    /// Detector occupancy edge, sampled at whole seconds.
    Detector {
        t: i64,
        intersection: usize,
        occupied: bool,
    },
    PreemptCall {
        t: i64,
        intersection: usize,
    },
    PreemptRelease {
        t: i64,
        intersection: usize,
    },
    ErvEnter {
        t: i64,
        vehicle: u32,
    },
    /// Whole-second ERV position, recorded before the control decision.
    ErvSample {
        t: i64,
        position_ft: f64,
        speed_fps: f64,
    },
    ErvStopbar {
        t: f64,
        intersection: usize,
    },
    ErvExit {
        t: f64,
        vehicle: u32,
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::Signal { t, .. }
            | Event::Detector { t, .. }
            | Event::PreemptCall { t, .. }
            | Event::PreemptRelease { t, .. }
            | Event::ErvEnter { t, .. }
            | Event::ErvSample { t, .. } => t as f64,
            Event::ErvStopbar { t, .. } | Event::ErvExit { t, .. } => t,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Event::Signal { .. } => "signal",
            Event::Detector { .. } => "detector",
            Event::PreemptCall { .. } => "preempt_call",
            Event::PreemptRelease { .. } => "preempt_release",
            Event::ErvEnter { .. } => "erv_enter",
            Event::ErvSample { .. } => "erv_sample",
            Event::ErvStopbar { .. } => "erv_stopbar",
            Event::ErvExit { .. } => "erv_exit",
        }
    }

    pub fn intersection(&self) -> Option<usize> {
        match *self {
            Event::Signal { intersection, .. }
            | Event::Detector { intersection, .. }
            | Event::PreemptCall { intersection, .. }
            | Event::PreemptRelease { intersection, .. }
            | Event::ErvStopbar { intersection, .. } => Some(intersection),
            _ => None,
        }
    }

    /// `{t, kind, intersection?, vehicle?, payload}` record.
    pub fn to_record(&self) -> serde_json::Value {
        let payload = match self {
            Event::Signal { phase, color, mode, .. } => {
                json!({ "phase": phase, "color": color, "mode": mode })
            }
            Event::Detector { occupied, .. } => json!({ "occupied": occupied }),
            Event::ErvSample { position_ft, speed_fps, .. } => {
                json!({ "position_ft": position_ft, "speed_fps": speed_fps })
            }
            _ => json!({}),
        };
        let mut rec = serde_json::Map::new();
        rec.insert("t".into(), json!(self.time()));
        rec.insert("kind".into(), json!(self.kind()));
        if let Some(i) = self.intersection() {
            rec.insert("intersection".into(), json!(i));
        }
        if let Event::ErvEnter { vehicle, .. } | Event::ErvExit { vehicle, .. } = self {
            rec.insert("vehicle".into(), json!(vehicle));
        }
        rec.insert("payload".into(), payload);
        serde_json::Value::Object(rec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        debug_assert!(self.events.last().is_none_or(|last| last.time() <= e.time()));
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, &e.to_record())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let e = Event::Signal {
            t: 12,
            intersection: 3,
            phase: Phase::Mainline,
            color: Color::Yellow,
            mode: Mode::PreemptExit,
        };
        assert_eq!(
            serde_json::to_string(&e.to_record()).unwrap(),
            r#"{"t":12.0,"kind":"signal","intersection":3,"payload":{"phase":"mainline","color":"yellow","mode":"preempt_exit"}}"#
        );
        let e = Event::ErvExit { t: 1100.5, vehicle: 7 };
        assert_eq!(
            serde_json::to_string(&e.to_record()).unwrap(),
            r#"{"t":1100.5,"kind":"erv_exit","vehicle":7,"payload":{}}"#
        );
    }
}
