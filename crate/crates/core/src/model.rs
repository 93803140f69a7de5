//! Shared domain types: demand intensities, rebalancing plans, designs, and
//! the per-station flow profiles consumed by the evaluators.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default planning horizon in hours.
pub const DEFAULT_HORIZON_HOURS: f64 = 24.0;

/// Dense 1-based station label. Storage elsewhere is 0-based; convert with
/// [`StationId::index`] and [`StationId::from_index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(usize);

impl StationId {
    pub fn new(label: usize, k: usize) -> Result<Self> {
        if label == 0 || label > k {
            return Err(Error::InvalidStation { station: label, k });
        }
        Ok(StationId(label))
    }

    pub fn from_index(index: usize) -> Self {
        StationId(index + 1)
    }

    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn label(self) -> usize {
        self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Rate function that is constant on right-open intervals `[start_j, start_{j+1})`.
///
/// `breakpoints` holds the interval start times; the first is always `0`
/// and the last interval extends to `horizon_end` (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantIntensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    horizon_end: f64,
}

impl PiecewiseConstantIntensity {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, horizon_end: f64) -> Result<Self> {
        if !(horizon_end.is_finite() && horizon_end > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {horizon_end} must be positive")));
        }
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "intensity needs one value per breakpoint, got {} breakpoints and {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidInput("first intensity breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("intensity breakpoints must be strictly increasing".into()));
        }
        if breakpoints.iter().any(|&b| !(b < horizon_end)) {
            return Err(Error::InvalidInput("intensity breakpoint at or beyond horizon".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("intensity values must be finite and non-negative".into()));
        }
        Ok(Self { breakpoints, values, horizon_end })
    }

    pub fn constant(rate: f64, horizon_end: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rate], horizon_end)
    }

    pub fn zero(horizon_end: f64) -> Self {
        Self { breakpoints: vec![0.0], values: vec![0.0], horizon_end }
    }

    /// Builds an intensity from equal-width bins covering `[0, horizon_end]`.
    pub fn from_bins(bin_width: f64, values: Vec<f64>, horizon_end: f64) -> Result<Self> {
        let breakpoints = (0..values.len()).map(|j| j as f64 * bin_width).collect();
        Self::new(breakpoints, values, horizon_end)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon_end
    }

    /// Change points strictly inside `(0, horizon_end)`.
    pub fn interior_breakpoints(&self) -> &[f64] {
        &self.breakpoints[1..]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn piece_index(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t) - 1
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon_end).contains(&t) {
            return Err(Error::OutsideHorizon { t, horizon: self.horizon_end });
        }
        Ok(self.values[self.piece_index(t)])
    }

    /// `(start, end, value)` for every piece.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.iter().enumerate().map(move |(j, &start)| {
            let end = self.breakpoints.get(j + 1).copied().unwrap_or(self.horizon_end);
            (start, end, self.values[j])
        })
    }

    /// Integral over `[a, b]` clamped to the horizon.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(self.horizon_end);
        if b <= a {
            return 0.0;
        }
        self.pieces()
            .map(|(s, e, v)| {
                let lo = s.max(a);
                let hi = e.min(b);
                if hi > lo {
                    v * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// The intensity `t -> self(t - delay)`, zero for `t < delay`, truncated
    /// at the horizon.
    pub fn shifted(&self, delay: f64) -> Result<Self> {
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::InvalidInput(format!("delay {delay} must be finite and non-negative")));
        }
        if delay == 0.0 {
            return Ok(self.clone());
        }
        let mut breakpoints = vec![0.0];
        let mut values = vec![0.0];
        for (&b, &v) in self.breakpoints.iter().zip(&self.values) {
            let t = b + delay;
            if t >= self.horizon_end {
                break;
            }
            breakpoints.push(t);
            values.push(v);
        }
        Ok(Self { breakpoints, values, horizon_end: self.horizon_end }.simplified())
    }

    /// Pointwise sum. All inputs must share the same horizon.
    pub fn sum<'a, I>(parts: I, horizon_end: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PiecewiseConstantIntensity>,
    {
        let parts: Vec<&PiecewiseConstantIntensity> = parts.into_iter().collect();
        for p in &parts {
            if p.horizon_end != horizon_end {
                return Err(Error::HorizonMismatch(p.horizon_end, horizon_end));
            }
        }
        let mut breakpoints: Vec<f64> =
            parts.iter().flat_map(|p| p.breakpoints.iter().copied()).chain(std::iter::once(0.0)).collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let values = breakpoints.iter().map(|&t| parts.iter().map(|p| p.values[p.piece_index(t)]).sum()).collect();
        Ok(Self { breakpoints, values, horizon_end }.simplified())
    }

    /// Merges adjacent pieces carrying the same value.
    pub fn simplified(mut self) -> Self {
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.values.len());
        for (&b, &v) in self.breakpoints.iter().zip(&self.values) {
            if values.last() == Some(&v) {
                continue;
            }
            breakpoints.push(b);
            values.push(v);
        }
        self.breakpoints = breakpoints;
        self.values = values;
        self
    }
}

/// Origin-destination demand intensities and travel times over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    k: usize,
    horizon: f64,
    lambda: Vec<PiecewiseConstantIntensity>,
    eta: Vec<f64>,
}

impl DemandModel {
    /// A model with `k` stations, no demand, and zero travel times.
    pub fn new(k: usize, horizon: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("station count must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { k, horizon, lambda: vec![PiecewiseConstantIntensity::zero(horizon); k * k], eta: vec![0.0; k * k] })
    }

    /// Every off-diagonal pair gets the same constant rate.
    pub fn uniform(k: usize, rate: f64, horizon: f64) -> Result<Self> {
        let mut model = Self::new(k, horizon)?;
        let intensity = PiecewiseConstantIntensity::constant(rate, horizon)?;
        for o in 0..k {
            for d in 0..k {
                if o != d {
                    model.lambda[o * k + d] = intensity.clone();
                }
            }
        }
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn stations(&self) -> impl Iterator<Item = StationId> {
        (0..self.k).map(StationId::from_index)
    }

    fn check(&self, s: StationId) -> Result<usize> {
        if s.label() == 0 || s.label() > self.k {
            return Err(Error::InvalidStation { station: s.label(), k: self.k });
        }
        Ok(s.index())
    }

    pub fn set_rate(&mut self, o: StationId, d: StationId, intensity: PiecewiseConstantIntensity) -> Result<()> {
        let (oi, di) = (self.check(o)?, self.check(d)?);
        if intensity.horizon_end != self.horizon {
            return Err(Error::HorizonMismatch(intensity.horizon_end, self.horizon));
        }
        if oi == di && !intensity.is_zero() {
            return Err(Error::InvalidInput(format!("diagonal demand at station {o} must be zero")));
        }
        self.lambda[oi * self.k + di] = intensity;
        Ok(())
    }

    pub fn set_travel_time(&mut self, o: StationId, d: StationId, hours: f64) -> Result<()> {
        let (oi, di) = (self.check(o)?, self.check(d)?);
        if !(hours.is_finite() && hours >= 0.0) || (oi == di && hours != 0.0) {
            return Err(Error::InvalidInput(format!("invalid travel time {hours} for {o}->{d}")));
        }
        self.eta[oi * self.k + di] = hours;
        Ok(())
    }

    /// Demand intensity for the pair, by 0-based indices.
    pub fn rate(&self, o: usize, d: usize) -> &PiecewiseConstantIntensity {
        &self.lambda[o * self.k + d]
    }

    pub fn travel_time(&self, o: usize, d: usize) -> f64 {
        self.eta[o * self.k + d]
    }

    /// Row-major `k x k` travel times.
    pub fn travel_times(&self) -> &[f64] {
        &self.eta
    }

    /// Pairs with non-zero demand, in (origin, destination) order.
    pub fn active_pairs(&self) -> impl Iterator<Item = (usize, usize, &PiecewiseConstantIntensity)> {
        let k = self.k;
        self.lambda.iter().enumerate().filter(|(_, l)| !l.is_zero()).map(move |(idx, l)| (idx / k, idx % k, l))
    }

    /// All breakpoints of all pair intensities, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.lambda.iter().flat_map(|l| l.interior_breakpoints().iter().copied()).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Deterministic relocation schedule: sorted departure instants per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalancingPlan {
    k: usize,
    horizon: f64,
    rho: Vec<Vec<f64>>,
}

impl RebalancingPlan {
    pub fn empty(k: usize, horizon: f64) -> Self {
        Self { k, horizon, rho: vec![Vec::new(); k * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Sets the instants for one pair; they are sorted on insertion.
    pub fn set_instants(&mut self, o: StationId, d: StationId, mut times: Vec<f64>) -> Result<()> {
        if o.label() == 0 || o.label() > self.k {
            return Err(Error::InvalidStation { station: o.label(), k: self.k });
        }
        if d.label() == 0 || d.label() > self.k {
            return Err(Error::InvalidStation { station: d.label(), k: self.k });
        }
        if o == d && !times.is_empty() {
            return Err(Error::InvalidInput(format!("rebalancing from station {o} to itself")));
        }
        if let Some(&t) = times.iter().find(|&&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::OutsideHorizon { t, horizon: self.horizon });
        }
        times.sort_by(f64::total_cmp);
        self.rho[o.index() * self.k + d.index()] = times;
        Ok(())
    }

    pub fn instants(&self, o: usize, d: usize) -> &[f64] {
        &self.rho[o * self.k + d]
    }

    pub fn is_empty(&self) -> bool {
        self.rho.iter().all(Vec::is_empty)
    }

    pub fn total_relocations(&self) -> usize {
        self.rho.iter().map(Vec::len).sum()
    }

    /// Every relocation as `(time, origin, destination)` with 0-based indices,
    /// ordered by time, then origin, then destination.
    pub fn relocations(&self) -> Vec<(f64, usize, usize)> {
        let mut out: Vec<(f64, usize, usize)> = self
            .rho
            .iter()
            .enumerate()
            .flat_map(|(idx, ts)| ts.iter().map(move |&t| (t, idx / self.k, idx % self.k)))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out
    }
}

/// Initial stock and parking capacity per station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDesign {
    v: Vec<u32>,
    c: Vec<u32>,
}

impl SystemDesign {
    pub fn new(v: Vec<u32>, c: Vec<u32>) -> Result<Self> {
        if v.len() != c.len() {
            return Err(Error::InvalidInput("stock and capacity vectors differ in length".into()));
        }
        for (i, (&vi, &ci)) in v.iter().zip(&c).enumerate() {
            if vi > ci {
                return Err(Error::StockExceedsCapacity { station: i + 1, v: vi, c: ci });
            }
        }
        Ok(Self { v, c })
    }

    pub fn uniform(k: usize, v: u32, c: u32) -> Result<Self> {
        Self::new(vec![v; k], vec![c; k])
    }

    pub fn k(&self) -> usize {
        self.v.len()
    }

    pub fn stock(&self) -> &[u32] {
        &self.v
    }

    pub fn capacity(&self) -> &[u32] {
        &self.c
    }

    pub fn total_fleet(&self) -> u64 {
        self.v.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn total_capacity(&self) -> u64 {
        self.c.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn check_stations(&self, k: usize) -> Result<()> {
        if self.k() != k {
            return Err(Error::InvalidInput(format!("design has {} stations, model has {k}", self.k())));
        }
        Ok(())
    }
}

/// Aggregated flows seen by one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationFlowProfile {
    pub lambda_a: PiecewiseConstantIntensity,
    pub lambda_d: PiecewiseConstantIntensity,
    pub rho_a: Vec<f64>,
    pub rho_d: Vec<f64>,
}

impl StationFlowProfile {
    pub fn horizon(&self) -> f64 {
        self.lambda_d.horizon_end
    }

    /// A station with constant arrival/departure rates and no rebalancing.
    pub fn constant(arrival_rate: f64, departure_rate: f64, horizon: f64) -> Result<Self> {
        Ok(Self {
            lambda_a: PiecewiseConstantIntensity::constant(arrival_rate, horizon)?,
            lambda_d: PiecewiseConstantIntensity::constant(departure_rate, horizon)?,
            rho_a: Vec::new(),
            rho_d: Vec::new(),
        })
    }

    pub fn expected_arrivals(&self, t: f64) -> f64 {
        self.lambda_a.integral(0.0, t)
    }

    pub fn expected_departures(&self, t: f64) -> f64 {
        self.lambda_d.integral(0.0, t)
    }
}

/// Builds the arrival/departure view of one station.
///
/// With `with_delay`, inbound intensities and rebalancing arrivals are shifted
/// by the pair travel time; arrivals that land after the horizon are dropped.
pub fn aggregate_station_flows(
    model: &DemandModel,
    plan: &RebalancingPlan,
    station: StationId,
    with_delay: bool,
) -> Result<StationFlowProfile> {
    let i = model.check(station)?;
    if plan.k != model.k {
        return Err(Error::InvalidInput(format!("plan has {} stations, model has {}", plan.k, model.k)));
    }
    if plan.horizon != model.horizon {
        return Err(Error::HorizonMismatch(plan.horizon, model.horizon));
    }
    let k = model.k;
    let horizon = model.horizon;

    let lambda_d = PiecewiseConstantIntensity::sum((0..k).filter(|&d| d != i).map(|d| model.rate(i, d)), horizon)?;

    let inbound: Vec<PiecewiseConstantIntensity> = (0..k)
        .filter(|&o| o != i)
        .map(|o| {
            let l = model.rate(o, i);
            if with_delay && !l.is_zero() {
                l.shifted(model.travel_time(o, i))
            } else {
                Ok(l.clone())
            }
        })
        .collect::<Result<_>>()?;
    let lambda_a = PiecewiseConstantIntensity::sum(inbound.iter(), horizon)?;

    let mut rho_d: Vec<f64> = (0..k).flat_map(|d| plan.instants(i, d).iter().copied()).collect();
    rho_d.sort_by(f64::total_cmp);

    let mut rho_a: Vec<f64> = (0..k)
        .flat_map(|o| {
            let shift = if with_delay { model.travel_time(o, i) } else { 0.0 };
            plan.instants(o, i).iter().map(move |&t| t + shift)
        })
        .filter(|&t| t <= horizon)
        .collect();
    rho_a.sort_by(f64::total_cmp);

    Ok(StationFlowProfile { lambda_a, lambda_d, rho_a, rho_d })
}

/// Kind of a timeline event. The declaration order is the tie-break order
/// for simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Breakpoint,
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEvent {
    pub time: f64,
    pub kind: EventKind,
}

impl TimelineEvent {
    fn order(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.kind.cmp(&other.kind))
    }
}

/// Sorted union of intensity breakpoints and rebalancing jumps for one station.
///
/// Breakpoints shared by the arrival and departure intensities appear once;
/// jumps are kept with multiplicity.
pub fn merged_event_timeline(profile: &StationFlowProfile) -> Vec<TimelineEvent> {
    let mut bps: Vec<f64> = profile
        .lambda_a
        .interior_breakpoints()
        .iter()
        .chain(profile.lambda_d.interior_breakpoints())
        .copied()
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();

    let mut events: Vec<TimelineEvent> = bps
        .into_iter()
        .map(|time| TimelineEvent { time, kind: EventKind::Breakpoint })
        .chain(profile.rho_a.iter().map(|&time| TimelineEvent { time, kind: EventKind::Arrival }))
        .chain(profile.rho_d.iter().map(|&time| TimelineEvent { time, kind: EventKind::Departure }))
        .collect();
    events.sort_by(TimelineEvent::order);
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sid(label: usize) -> StationId {
        StationId(label)
    }

    #[test]
    fn intensity_eval_uses_right_open_intervals() {
        let l = PiecewiseConstantIntensity::new(vec![0.0, 8.0, 17.0], vec![1.0, 3.0, 0.5], 24.0).unwrap();
        assert_eq!(l.eval(0.0).unwrap(), 1.0);
        assert_eq!(l.eval(7.999).unwrap(), 1.0);
        assert_eq!(l.eval(8.0).unwrap(), 3.0);
        assert_eq!(l.eval(24.0).unwrap(), 0.5);
        assert!(matches!(l.eval(24.5), Err(Error::OutsideHorizon { .. })));
        assert!(l.eval(-1.0).is_err());
    }

    #[test]
    fn intensity_rejects_bad_inputs() {
        assert!(PiecewiseConstantIntensity::new(vec![0.0, 2.0, 1.0], vec![1.0; 3], 24.0).is_err());
        assert!(PiecewiseConstantIntensity::new(vec![0.0], vec![-1.0], 24.0).is_err());
        assert!(PiecewiseConstantIntensity::new(vec![0.0], vec![f64::NAN], 24.0).is_err());
        assert!(PiecewiseConstantIntensity::new(vec![1.0], vec![1.0], 24.0).is_err());
        assert!(PiecewiseConstantIntensity::new(vec![0.0, 24.0], vec![1.0, 1.0], 24.0).is_err());
    }

    #[test]
    fn uniform_model_aggregates_to_row_sum() {
        let model = DemandModel::uniform(50, 0.05, 24.0).unwrap();
        let plan = RebalancingPlan::empty(50, 24.0);
        let p = aggregate_station_flows(&model, &plan, sid(7), false).unwrap();
        assert_relative_eq!(p.lambda_a.eval(3.0).unwrap(), 2.45, epsilon = 1e-12);
        assert_relative_eq!(p.lambda_d.eval(3.0).unwrap(), 2.45, epsilon = 1e-12);
        assert!(merged_event_timeline(&p).is_empty());
    }

    #[test]
    fn delayed_inbound_is_zero_before_travel_time() {
        let mut model = DemandModel::new(2, 24.0).unwrap();
        model.set_rate(sid(1), sid(2), PiecewiseConstantIntensity::constant(1.0, 24.0).unwrap()).unwrap();
        model.set_travel_time(sid(1), sid(2), 0.5).unwrap();
        let plan = RebalancingPlan::empty(2, 24.0);
        let p = aggregate_station_flows(&model, &plan, sid(2), true).unwrap();
        assert_eq!(p.lambda_a.eval(0.0).unwrap(), 0.0);
        assert_eq!(p.lambda_a.eval(0.49).unwrap(), 0.0);
        assert_eq!(p.lambda_a.eval(0.5).unwrap(), 1.0);
        assert_eq!(p.lambda_a.eval(24.0).unwrap(), 1.0);
        let undelayed = aggregate_station_flows(&model, &plan, sid(2), false).unwrap();
        assert_eq!(undelayed.lambda_a.eval(0.0).unwrap(), 1.0);
    }

    #[test]
    fn rebalancing_arrivals_shift_by_travel_time() {
        let mut model = DemandModel::new(2, 24.0).unwrap();
        model.set_travel_time(sid(1), sid(2), 0.4).unwrap();
        let mut plan = RebalancingPlan::empty(2, 24.0);
        plan.set_instants(sid(1), sid(2), vec![1.0, 23.8]).unwrap();
        let p = aggregate_station_flows(&model, &plan, sid(2), true).unwrap();
        assert_eq!(p.rho_a.len(), 1);
        assert_relative_eq!(p.rho_a[0], 1.4, epsilon = 1e-12);
        let src = aggregate_station_flows(&model, &plan, sid(1), true).unwrap();
        assert_eq!(src.rho_d, vec![1.0, 23.8]);
    }

    #[test]
    fn invalid_station_and_horizon_mismatch() {
        let model = DemandModel::new(3, 24.0).unwrap();
        let plan = RebalancingPlan::empty(3, 24.0);
        assert!(matches!(
            aggregate_station_flows(&model, &plan, sid(4), false),
            Err(Error::InvalidStation { station: 4, k: 3 })
        ));
        let other = RebalancingPlan::empty(3, 12.0);
        assert!(matches!(aggregate_station_flows(&model, &other, sid(1), false), Err(Error::HorizonMismatch(..))));
        assert!(StationId::new(0, 3).is_err());
    }

    #[test]
    fn timeline_orders_kinds_at_ties() {
        let profile = StationFlowProfile {
            lambda_a: PiecewiseConstantIntensity::new(vec![0.0, 8.0, 17.0], vec![1.0, 2.0, 1.0], 24.0).unwrap(),
            lambda_d: PiecewiseConstantIntensity::new(vec![0.0, 8.0], vec![1.0, 3.0], 24.0).unwrap(),
            rho_a: vec![9.0],
            rho_d: vec![12.0],
        };
        let tl = merged_event_timeline(&profile);
        let got: Vec<(f64, EventKind)> = tl.iter().map(|e| (e.time, e.kind)).collect();
        assert_eq!(
            got,
            vec![
                (8.0, EventKind::Breakpoint),
                (9.0, EventKind::Arrival),
                (12.0, EventKind::Departure),
                (17.0, EventKind::Breakpoint)
            ]
        );

        let tie = StationFlowProfile {
            lambda_a: PiecewiseConstantIntensity::zero(24.0),
            lambda_d: PiecewiseConstantIntensity::new(vec![0.0, 5.0], vec![0.0, 1.0], 24.0).unwrap(),
            rho_a: vec![5.0],
            rho_d: vec![5.0],
        };
        let kinds: Vec<EventKind> = merged_event_timeline(&tie).iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Breakpoint, EventKind::Arrival, EventKind::Departure]);
    }

    #[test]
    fn design_rejects_stock_above_capacity() {
        assert!(matches!(
            SystemDesign::new(vec![1, 5], vec![2, 4]),
            Err(Error::StockExceedsCapacity { station: 2, v: 5, c: 4 })
        ));
        let d = SystemDesign::new(vec![1, 2], vec![3, 4]).unwrap();
        assert_eq!(d.total_fleet(), 3);
        assert_eq!(d.total_capacity(), 7);
    }

    #[test]
    fn plan_relocations_are_time_ordered() {
        let mut plan = RebalancingPlan::empty(3, 24.0);
        plan.set_instants(sid(2), sid(1), vec![5.0, 1.0]).unwrap();
        plan.set_instants(sid(1), sid(3), vec![5.0]).unwrap();
        assert_eq!(plan.relocations(), vec![(1.0, 1, 0), (5.0, 0, 2), (5.0, 1, 0)]);
        assert!(plan.set_instants(sid(1), sid(1), vec![2.0]).is_err());
        assert!(plan.set_instants(sid(1), sid(2), vec![25.0]).is_err());
    }
}
