//! Open-loop rebalancing plans that offset expected stock drift.
//!
//! Per time bin, each station's expected net accumulation is computed from
//! the demand model. Surplus stations ship their excess to deficit stations
//! along a minimum travel-time transportation solution, and the resulting
//! per-pair volumes are turned into evenly spaced relocation instants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::flow::MinCostFlow;
use crate::model::{DemandModel, RebalancingPlan, StationId};

/// Net expected accumulation per bin and station (vehicles per bin).
/// Positive values are surpluses.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceProfile {
    pub bin_edges: Vec<f64>,
    /// `delta[b][i]` for bin `b`, station index `i`.
    pub delta: Vec<Vec<f64>>,
}

impl ImbalanceProfile {
    pub fn bins(&self) -> usize {
        self.delta.len()
    }

    pub fn k(&self) -> usize {
        self.delta.first().map_or(0, Vec::len)
    }
}

/// Relocation volumes within one bin, as `(origin, destination, vehicles)`
/// with 0-based station indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BinFlows {
    pub start: f64,
    pub end: f64,
    pub flows: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct BalanceOptions {
    /// Subtract the mean imbalance from every station before solving.
    pub project_residual: bool,
    /// Largest `|sum(delta)|` accepted without projection.
    pub tolerance: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self { project_residual: true, tolerance: 1e-9 }
    }
}

/// Equal-width bin edges over `[0, horizon]`; the last bin may be shorter.
pub fn bin_edges(horizon: f64, bin_hours: f64) -> Result<Vec<f64>> {
    if !(bin_hours.is_finite() && bin_hours > 0.0) {
        return Err(Error::InvalidInput(format!("bin length {bin_hours} must be positive")));
    }
    let mut edges = vec![0.0];
    let mut b = 1;
    loop {
        let t = b as f64 * bin_hours;
        if t >= horizon - 1e-12 {
            edges.push(horizon);
            break;
        }
        edges.push(t);
        b += 1;
    }
    Ok(edges)
}

fn check_edges(edges: &[f64], horizon: f64) -> Result<()> {
    if edges.len() < 2 || edges[0] != 0.0 || *edges.last().unwrap() != horizon {
        return Err(Error::InvalidInput("bins must partition [0, horizon]".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("bin edges must be strictly increasing".into()));
    }
    Ok(())
}

/// Expected inflow minus outflow per station and bin, with zero travel delay.
pub fn compute_imbalance(model: &DemandModel, edges: &[f64]) -> Result<ImbalanceProfile> {
    check_edges(edges, model.horizon())?;
    let k = model.k();
    let mut delta = vec![vec![0.0; k]; edges.len() - 1];
    for (o, d, l) in model.active_pairs() {
        for (b, w) in edges.windows(2).enumerate() {
            let volume = l.integral(w[0], w[1]);
            delta[b][o] -= volume;
            delta[b][d] += volume;
        }
    }
    Ok(ImbalanceProfile { bin_edges: edges.to_vec(), delta })
}

/// Minimum travel-time relocation volumes that cancel each bin's imbalance.
///
/// `travel_times` is row-major `k x k`. For every station the solution
/// satisfies `shipped_out - received = delta`.
pub fn balance_flows(
    imbalance: &ImbalanceProfile,
    travel_times: &[f64],
    options: BalanceOptions,
) -> Result<Vec<BinFlows>> {
    let k = imbalance.k();
    if travel_times.len() != k * k {
        return Err(Error::InvalidInput("travel time matrix does not match station count".into()));
    }
    let mut out = Vec::with_capacity(imbalance.bins());
    for (b, delta) in imbalance.delta.iter().enumerate() {
        let residual: f64 = delta.iter().sum();
        let scale = 1.0 + delta.iter().map(|x| x.abs()).sum::<f64>();
        let delta: Vec<f64> = if options.project_residual {
            let mean = residual / k as f64;
            delta.iter().map(|x| x - mean).collect()
        } else if residual.abs() > options.tolerance * scale {
            return Err(Error::UnbalancedSupply(residual, b));
        } else {
            delta.clone()
        };
        out.push(BinFlows {
            start: imbalance.bin_edges[b],
            end: imbalance.bin_edges[b + 1],
            flows: transport(&delta, travel_times)?,
        });
    }
    Ok(out)
}

fn transport(delta: &[f64], travel_times: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
    const NEGLIGIBLE: f64 = 1e-12;
    let k = delta.len();
    let source = 2 * k;
    let sink = 2 * k + 1;
    let mut g = MinCostFlow::new(2 * k + 2);
    let mut supply = 0.0;
    let mut demand = 0.0;
    for (i, &x) in delta.iter().enumerate() {
        if x > NEGLIGIBLE {
            g.add_edge(source, i, x, 0.0);
            supply += x;
        } else if x < -NEGLIGIBLE {
            g.add_edge(k + i, sink, -x, 0.0);
            demand -= x;
        }
    }
    let mut lanes = Vec::new();
    for (o, &xo) in delta.iter().enumerate() {
        if xo <= NEGLIGIBLE {
            continue;
        }
        for (d, &xd) in delta.iter().enumerate() {
            if xd >= -NEGLIGIBLE {
                continue;
            }
            let e = g.add_edge(o, k + d, f64::INFINITY, travel_times[o * k + d]);
            lanes.push((o, d, e));
        }
    }
    let target = supply.min(demand);
    let (moved, _) = g.solve(source, sink, target);
    if (moved - target).abs() > 1e-9 * (1.0 + target) {
        return Err(Error::Invariant(format!("transportation solved {moved} of {target}")));
    }
    Ok(lanes.into_iter().map(|(o, d, e)| (o, d, g.flow(e))).filter(|&(_, _, f)| f > 1e-9).collect())
}

/// Turns per-bin volumes into relocation instants.
///
/// Fractional volumes carry over between bins per pair, so the emitted count
/// up to any bin equals the rounded cumulative volume. The `n` instants of a
/// bin `[s, s + L)` sit at `s + (j - 1/2) L / n`.
pub fn discretize_plan(flows: &[BinFlows], k: usize, horizon: f64) -> Result<RebalancingPlan> {
    let mut per_pair: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (b, bin) in flows.iter().enumerate() {
        for &(o, d, r) in &bin.flows {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidInput(format!("relocation volume {r} must be non-negative")));
            }
            per_pair.entry((o, d)).or_default().push((b, r));
        }
    }
    let mut plan = RebalancingPlan::empty(k, horizon);
    for ((o, d), volumes) in per_pair {
        let mut cumulative = 0.0;
        let mut emitted = 0i64;
        let mut times = Vec::new();
        for (b, r) in volumes {
            cumulative += r;
            let due = (cumulative + 0.5).floor() as i64;
            let n = due - emitted;
            if n <= 0 {
                continue;
            }
            let (start, len) = (flows[b].start, flows[b].end - flows[b].start);
            times.extend((1..=n).map(|j| start + (j as f64 - 0.5) * len / n as f64));
            emitted = due;
        }
        if !times.is_empty() {
            plan.set_instants(StationId::from_index(o), StationId::from_index(d), times)?;
        }
    }
    Ok(plan)
}

/// Demand-balancing plan with bins of `bin_hours`.
pub fn plan_rebalancing(model: &DemandModel, bin_hours: f64) -> Result<RebalancingPlan> {
    let edges = bin_edges(model.horizon(), bin_hours)?;
    let imbalance = compute_imbalance(model, &edges)?;
    let flows = balance_flows(&imbalance, model.travel_times(), BalanceOptions::default())?;
    discretize_plan(&flows, model.k(), model.horizon())
}
