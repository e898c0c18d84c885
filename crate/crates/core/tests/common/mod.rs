//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use evplab::net::{DemandSpec, NetworkSpec};
use evplab::sim::{run_from, warm_up, StopAt};
use evplab::strategies::{CallTime, SchedulePolicy};
use evplab::Result;

/// Strict-optimal calls by brute force: every intersection in corridor
/// order, every call second from ERV entry up to the default check-in,
/// upstream calls held at their swept optima, latest minimum wins.
pub fn exhaustive_optimal(net: &NetworkSpec, demand: &DemandSpec, seed: u64, entry_s: i64) -> Result<Vec<CallTime>> {
    let net = Arc::new(net.clone());
    let base = warm_up(&net, demand, seed, entry_s)?;
    let n = net.len();
    let mut calls = vec![CallTime::Default; n];
    for i in 0..n {
        let arrive = |c: CallTime| -> Result<(f64, Option<i64>)> {
            let mut cs = calls.clone();
            cs[i] = c;
            let st = run_from(base.clone(), entry_s, &mut SchedulePolicy { calls: cs }, StopAt::Crossing(i))?;
            Ok((st.erv_crossing_s(i).unwrap(), st.erv_checkin_s(i)))
        };
        let (f_default, checkin) = arrive(CallTime::Default)?;
        let t_default = checkin.unwrap();
        let mut best = (f_default, t_default);
        for t in (entry_s..t_default).rev() {
            let (f, _) = arrive(CallTime::At(t))?;
            if f < best.0 {
                best = (f, t);
            }
        }
        calls[i] = if best.1 == t_default { CallTime::Default } else { CallTime::At(best.1) };
    }
    Ok(calls)
}
