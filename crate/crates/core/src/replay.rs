//! Deterministic replay of recorded rental days against a design.
//!
//! Rentals and planned relocations are merged into one stream. A departure
//! from an empty station is an availability failure and the trip is skipped.
//! An arrival at a full station is a capacity failure; in
//! [`ReplayMode::Overflow`] the vehicle docks anyway, while
//! [`ReplayMode::Strict`] removes it from the system. Unlike the Monte Carlo
//! simulator, a replay runs through the whole day after a failure.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DaySequence;
use crate::model::{RebalancingPlan, SystemDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    #[default]
    Overflow,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub date: NaiveDate,
    pub availability_failures: u32,
    pub capacity_failures: u32,
    pub day_failed: bool,
    pub final_stocks: Vec<u32>,
    /// Vehicles still travelling at the end of the horizon.
    pub in_transit: u32,
    /// Vehicles discarded at full stations in strict mode.
    pub discarded: u32,
}

#[derive(Debug, Clone, Copy)]
struct Departure {
    t: f64,
    o: usize,
    d: usize,
    eta: f64,
    relocation: bool,
}

/// Pending arrival keyed by `(time, origin, destination, sequence)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Arrival {
    t: f64,
    o: usize,
    d: usize,
    seq: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.t.total_cmp(&other.t).then(self.o.cmp(&other.o)).then(self.d.cmp(&other.d)).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Replays one day.
///
/// `travel_times` is the row-major `k x k` matrix used for relocations;
/// rentals carry their own observed durations. Events after the plan
/// horizon are ignored.
pub fn replay_day(
    seq: &DaySequence,
    plan: &RebalancingPlan,
    travel_times: &[f64],
    design: &SystemDesign,
    mode: ReplayMode,
) -> Result<ReplayOutcome> {
    replay_day_observed(seq, plan, travel_times, design, mode, |_, _, _| {})
}

/// As [`replay_day`], calling `observe(t, stocks, in_transit)` after every
/// processed event.
pub fn replay_day_observed<F>(
    seq: &DaySequence,
    plan: &RebalancingPlan,
    travel_times: &[f64],
    design: &SystemDesign,
    mode: ReplayMode,
    mut observe: F,
) -> Result<ReplayOutcome>
where
    F: FnMut(f64, &[u32], u32),
{
    let k = design.k();
    if plan.k() != k || travel_times.len() != k * k {
        return Err(Error::InvalidInput(format!("plan, travel times and design disagree on k = {k}")));
    }
    let horizon = plan.horizon();

    let mut departures: Vec<Departure> = Vec::with_capacity(seq.events.len() + plan.total_relocations());
    for e in &seq.events {
        let (o, d) = (e.o.index(), e.d.index());
        if o >= k || d >= k {
            return Err(Error::InvalidStation { station: o.max(d) + 1, k });
        }
        if e.t <= horizon {
            departures.push(Departure { t: e.t, o, d, eta: e.eta, relocation: false });
        }
    }
    for (t, o, d) in plan.relocations() {
        departures.push(Departure { t, o, d, eta: travel_times[o * k + d], relocation: true });
    }
    departures.sort_by(|a, b| {
        a.t.total_cmp(&b.t).then(a.o.cmp(&b.o)).then(a.d.cmp(&b.d)).then(a.relocation.cmp(&b.relocation))
    });

    let capacity = design.capacity();
    let mut stock = design.stock().to_vec();
    let mut pending: BinaryHeap<Reverse<Arrival>> = BinaryHeap::new();
    let mut out = ReplayOutcome {
        date: seq.date,
        availability_failures: 0,
        capacity_failures: 0,
        day_failed: false,
        final_stocks: Vec::new(),
        in_transit: 0,
        discarded: 0,
    };

    let mut next = 0;
    loop {
        let arrival_due = pending.peek().map(|Reverse(a)| a.t);
        let departure_due = departures.get(next).map(|d| d.t);
        let take_arrival = match (arrival_due, departure_due) {
            (Some(a), Some(d)) => a <= d,
            (Some(a), None) if a <= horizon => true,
            (Some(_), None) => break,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_arrival {
            let Reverse(a) = pending.pop().expect("peeked");
            if stock[a.d] >= capacity[a.d] {
                out.capacity_failures += 1;
                match mode {
                    ReplayMode::Overflow => stock[a.d] += 1,
                    ReplayMode::Strict => out.discarded += 1,
                }
            } else {
                stock[a.d] += 1;
            }
            observe(a.t, &stock, pending.len() as u32);
        } else {
            let dep = departures[next];
            next += 1;
            if stock[dep.o] == 0 {
                out.availability_failures += 1;
            } else {
                stock[dep.o] -= 1;
                pending.push(Reverse(Arrival { t: dep.t + dep.eta, o: dep.o, d: dep.d, seq: next }));
            }
            observe(dep.t, &stock, pending.len() as u32);
        }
    }

    out.in_transit = pending.len() as u32;
    out.day_failed = out.availability_failures + out.capacity_failures > 0;
    out.final_stocks = stock;
    Ok(out)
}

/// Fraction of days that saw at least one failure.
pub fn failure_rate(outcomes: &[ReplayOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no replay outcomes".into()));
    }
    Ok(outcomes.iter().filter(|o| o.day_failed).count() as f64 / outcomes.len() as f64)
}

/// Equal capacity `C` everywhere, half of it filled (rounded down).
pub fn baseline_design(k: usize, per_station_capacity: u32) -> SystemDesign {
    SystemDesign::uniform(k, per_station_capacity / 2, per_station_capacity).expect("C/2 <= C")
}

pub fn replay_days(
    days: &[DaySequence],
    plan: &RebalancingPlan,
    travel_times: &[f64],
    design: &SystemDesign,
    mode: ReplayMode,
) -> Result<Vec<ReplayOutcome>> {
    days.par_iter().map(|seq| replay_day(seq, plan, travel_times, design, mode)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub total_fleet: u64,
    pub total_capacity: u64,
    pub failure_rate: f64,
}

pub fn sweep(
    designs: &[(String, SystemDesign)],
    days: &[DaySequence],
    plan: &RebalancingPlan,
    travel_times: &[f64],
    mode: ReplayMode,
) -> Result<Vec<SweepRow>> {
    designs
        .iter()
        .map(|(label, design)| {
            let outcomes = replay_days(days, plan, travel_times, design, mode)?;
            Ok(SweepRow {
                label: label.clone(),
                total_fleet: design.total_fleet(),
                total_capacity: design.total_capacity(),
                failure_rate: failure_rate(&outcomes)?,
            })
        })
        .collect()
}
