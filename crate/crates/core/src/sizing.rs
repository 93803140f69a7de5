//! Per-station stock and capacity sizing against a failure budget.
//!
//! The system budget `z` is split into station budgets `z_i` (uniformly by
//! default). Each station then gets the smallest stock whose
//! availability-only failure probability (unbounded capacity) is at most
//! `z_i / 2`, followed by the smallest capacity that brings the full station
//! failure probability under `z_i`. Both searches bracket by doubling and
//! finish by bisection on the monotone failure curves. Summing the station
//! probabilities bounds the coupled failure probability, so the design is
//! feasible for the joint problem.

use rayon::prelude::*;

use crate::decoupled::{system_failure_upper_bound, Capacity, DecoupledBound, StationEvaluator};
use crate::error::{Error, Result};
use crate::model::{
    aggregate_station_flows, DemandModel, RebalancingPlan, StationFlowProfile, StationId, SystemDesign,
};
use crate::scalar::compensated_sum;

/// Hard cap for both searches.
pub const SEARCH_CAP: u64 = 1_000_000;

/// Fraction of a station budget tolerated as truncation error in
/// unbounded-capacity evaluations.
const TAIL_FRACTION: f64 = 1e-3;

/// Slack for rounding in monotonicity checks.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SizingRequest {
    pub z: f64,
    pub horizon: f64,
    /// Per-station budgets; they sum to `z`.
    pub partition: Vec<f64>,
}

impl SizingRequest {
    /// `z_i = z / k` for every station.
    pub fn uniform(z: f64, k: usize, horizon: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("no stations to size".into()));
        }
        Self::with_partition(z, horizon, vec![z / k as f64; k])
    }

    pub fn with_partition(z: f64, horizon: f64, partition: Vec<f64>) -> Result<Self> {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::InvalidInput(format!("failure budget {z} must lie in (0, 1)")));
        }
        if partition.iter().any(|&zi| !(zi > 0.0)) {
            return Err(Error::InvalidInput("station budgets must be positive".into()));
        }
        let total: f64 = partition.iter().sum();
        if (total - z).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("station budgets sum to {total}, expected {z}")));
        }
        Ok(Self { z, horizon, partition })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Stock first against half the budget, then capacity.
    Coordinate,
    /// Minimise `v + c` over all pairs with `c <= max_capacity`.
    Exhaustive { max_capacity: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSizing {
    pub station: StationId,
    pub v: u32,
    pub c: u32,
    pub qf: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingResult {
    pub z: f64,
    pub stations: Vec<StationSizing>,
    /// Sum of station failure probabilities.
    pub bound: f64,
}

impl SizingResult {
    pub fn design(&self) -> SystemDesign {
        SystemDesign::new(self.stations.iter().map(|s| s.v).collect(), self.stations.iter().map(|s| s.c).collect())
            .expect("sized stations satisfy v <= c")
    }
}

/// Smallest `n >= lo` with `f(n) <= budget`.
///
/// The upper bracket starts at `first_hi` and doubles; each doubling must not
/// increase `f`, otherwise the monotonicity the search relies on is broken.
fn min_satisfying<F>(lo: u64, first_hi: u64, cap: u64, budget: f64, f: F) -> Result<u64>
where
    F: Fn(u64) -> Result<f64>,
{
    let f_lo = f(lo)?;
    if f_lo <= budget {
        return Ok(lo);
    }
    let mut fail = lo;
    let mut f_fail = f_lo;
    let mut hi = first_hi.max(lo + 1);
    loop {
        if hi > cap {
            return Err(Error::BudgetUnreachable { station: 0, budget, cap });
        }
        let f_hi = f(hi)?;
        if f_hi > f_fail + MONOTONE_SLACK {
            return Err(Error::Invariant(format!(
                "failure probability rose from {f_fail} at {fail} to {f_hi} at {hi}"
            )));
        }
        if f_hi <= budget {
            break;
        }
        fail = hi;
        f_fail = f_hi;
        hi = hi.saturating_mul(2);
    }
    while hi - fail > 1 {
        let mid = fail + (hi - fail) / 2;
        if f(mid)? <= budget {
            hi = mid;
        } else {
            fail = mid;
        }
    }
    Ok(hi)
}

/// Smallest stock whose unbounded-capacity failure probability is within
/// `budget_half`.
pub fn size_station_stock(profile: &StationFlowProfile, horizon: f64, budget_half: f64) -> Result<u32> {
    if !(budget_half > 0.0) {
        return Err(Error::InvalidInput(format!("budget {budget_half} must be positive")));
    }
    let ev = StationEvaluator::new(profile).with_tail_tolerance(TAIL_FRACTION * budget_half);
    let first_hi = profile.expected_departures(horizon).ceil().max(1.0) as u64;
    let v = min_satisfying(0, first_hi, SEARCH_CAP, budget_half, |v| {
        ev.failure_probability::<f64>(v as u32, Capacity::Unbounded, horizon)
    })?;
    Ok(v as u32)
}

/// Smallest capacity `c >= v` whose failure probability is within `budget`.
pub fn size_station_capacity(profile: &StationFlowProfile, horizon: f64, v: u32, budget: f64) -> Result<u32> {
    if !(budget > 0.0) {
        return Err(Error::InvalidInput(format!("budget {budget} must be positive")));
    }
    let ev = StationEvaluator::new(profile);
    let first_hi = v as u64 + profile.expected_arrivals(horizon).ceil().max(1.0) as u64;
    let c = min_satisfying(v as u64, first_hi, SEARCH_CAP, budget, |c| {
        ev.failure_probability::<f64>(v, Capacity::Bounded(c as u32), horizon)
    })?;
    Ok(c as u32)
}

/// Joint search minimising `v + c` (ties: smaller `v`) subject to
/// `qF(T; v, c) <= budget`, with `c <= max_capacity`.
pub fn size_station_exhaustive(
    profile: &StationFlowProfile,
    horizon: f64,
    budget: f64,
    max_capacity: u32,
) -> Result<(u32, u32)> {
    let ev = StationEvaluator::new(profile);
    let mut best: Option<(u32, u32)> = None;
    for v in 0..=max_capacity {
        if let Some((bv, bc)) = best {
            if 2 * v >= bv + bc {
                break;
            }
        }
        let c = match min_satisfying(v as u64, v as u64 + 1, max_capacity as u64, budget, |c| {
            ev.failure_probability::<f64>(v, Capacity::Bounded(c as u32), horizon)
        }) {
            Ok(c) => c as u32,
            Err(Error::BudgetUnreachable { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(bv, bc)| v + c < bv + bc) {
            best = Some((v, c));
        }
    }
    best.ok_or(Error::BudgetUnreachable { station: 0, budget, cap: max_capacity as u64 })
}

fn size_one(
    profile: &StationFlowProfile,
    horizon: f64,
    budget: f64,
    strategy: SearchStrategy,
) -> Result<(u32, u32, f64)> {
    let (v, c) = match strategy {
        SearchStrategy::Coordinate => {
            let v = size_station_stock(profile, horizon, budget / 2.0)?;
            (v, size_station_capacity(profile, horizon, v, budget)?)
        }
        SearchStrategy::Exhaustive { max_capacity } => size_station_exhaustive(profile, horizon, budget, max_capacity)?,
    };
    let qf = StationEvaluator::new(profile).failure_probability::<f64>(v, Capacity::Bounded(c), horizon)?;
    Ok((v, c, qf))
}

/// Sizes every station and re-verifies the summed bound with an independent
/// evaluation pass.
pub fn size_system(
    model: &DemandModel,
    plan: &RebalancingPlan,
    request: &SizingRequest,
    with_delay: bool,
    strategy: SearchStrategy,
) -> Result<SizingResult> {
    if request.partition.len() != model.k() {
        return Err(Error::InvalidInput(format!(
            "{} station budgets for {} stations",
            request.partition.len(),
            model.k()
        )));
    }
    if !(request.horizon > 0.0 && request.horizon <= model.horizon()) {
        return Err(Error::OutsideHorizon { t: request.horizon, horizon: model.horizon() });
    }
    let stations: Vec<StationId> = model.stations().collect();
    let sized: Vec<StationSizing> = stations
        .par_iter()
        .map(|&station| {
            let budget = request.partition[station.index()];
            let profile = aggregate_station_flows(model, plan, station, with_delay)?;
            let (v, c, qf) = size_one(&profile, request.horizon, budget, strategy).map_err(|e| match e {
                Error::BudgetUnreachable { budget, cap, .. } => {
                    Error::BudgetUnreachable { station: station.label(), budget, cap }
                }
                other => other,
            })?;
            Ok(StationSizing { station, v, c, qf, budget })
        })
        .collect::<Result<_>>()?;

    let qfs: Vec<f64> = sized.iter().map(|s| s.qf).collect();
    let bound = compensated_sum(&qfs);
    let result = SizingResult { z: request.z, stations: sized, bound };

    let check: DecoupledBound<f64> =
        system_failure_upper_bound(model, plan, &result.design(), request.horizon, with_delay)?;
    if (check.total - bound).abs() > 1e-12 {
        return Err(Error::Invariant(format!("re-evaluated bound {} differs from {bound}", check.total)));
    }
    if bound > request.z * (1.0 + 1e-12) {
        return Err(Error::Infeasible { bound, z: request.z });
    }
    Ok(result)
}
