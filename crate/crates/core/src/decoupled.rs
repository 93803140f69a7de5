//! Per-station birth-death model with independent arrival and departure
//! streams and an absorbing failure state.
//!
//! Each station's occupancy distribution evolves under a tridiagonal
//! generator between rebalancing jumps; rebalancing arrivals and departures
//! shift the vector one slot. The summed station failure masses give an
//! upper bound on the failure probability of the coupled system.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    aggregate_station_flows, merged_event_timeline, DemandModel, EventKind, RebalancingPlan, StationFlowProfile,
    StationId, SystemDesign, TimelineEvent,
};
use crate::scalar::{compensated_sum, Scalar};
use crate::transient::{propagate, JumpChain, FAILURE_SINK, SINKS, TRUNCATION_SINK};

/// Tolerated drift of `sum(q) + qF` away from one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default bound on the mass allowed to leave through the working ceiling in
/// unbounded-capacity mode.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-10;

const MAX_WORKING_CAPACITY: usize = 1 << 24;

/// Station parking capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Bounded(u32),
    /// No capacity failures; evaluated on a truncated vector.
    Unbounded,
}

/// Direction of a rebalancing jump as seen by the station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    Arrival,
    Departure,
}

/// Occupancy distribution of one station together with the absorbed
/// failure mass.
#[derive(Debug, Clone, PartialEq)]
pub struct StationDistribution<S> {
    /// `q[j]`: probability of `j` vehicles with no failure so far.
    pub q: Vec<S>,
    /// Absorbed failure mass.
    pub failed: S,
    /// Mass pushed past the working ceiling (unbounded mode only).
    pub truncated: S,
    pub t: f64,
    capacity_failures: bool,
}

impl<S: Scalar> StationDistribution<S> {
    /// Unit mass at `v` vehicles for a station of capacity `c`.
    pub fn point_mass(v: u32, c: u32, t: f64) -> Result<Self> {
        if v > c {
            return Err(Error::StockExceedsCapacity { station: 0, v, c });
        }
        let mut q = vec![S::zero(); c as usize + 1];
        q[v as usize] = S::one();
        Ok(Self { q, failed: S::zero(), truncated: S::zero(), t, capacity_failures: true })
    }

    /// Unit mass at `v` on a vector truncated at `working_capacity`, with
    /// capacity failures disabled.
    pub fn unbounded(v: u32, working_capacity: usize, t: f64) -> Self {
        let mut q = vec![S::zero(); working_capacity.max(v as usize) + 1];
        q[v as usize] = S::one();
        Self { q, failed: S::zero(), truncated: S::zero(), t, capacity_failures: false }
    }

    pub fn from_parts(q: Vec<S>, failed: S, t: f64) -> Self {
        Self { q, failed, truncated: S::zero(), t, capacity_failures: true }
    }

    pub fn capacity(&self) -> usize {
        self.q.len() - 1
    }

    pub fn total_mass(&self) -> S {
        compensated_sum(&self.q) + self.failed + self.truncated
    }

    /// Probability of `j` vehicles; zero outside the state range.
    pub fn occupancy(&self, j: usize) -> S {
        self.q.get(j).copied().unwrap_or_else(S::zero)
    }

    /// Shift by one vehicle. Mass that would leave the state range is
    /// absorbed as failure (or truncation when capacity is unbounded).
    pub fn apply_jump(&self, kind: JumpKind) -> Self {
        let mut out = self.clone();
        out.jump_in_place(kind);
        out
    }

    fn jump_in_place(&mut self, kind: JumpKind) {
        match kind {
            JumpKind::Arrival => {
                let top = self.q.pop().unwrap_or_else(S::zero);
                self.q.insert(0, S::zero());
                if self.capacity_failures {
                    self.failed = self.failed + top;
                } else {
                    self.truncated = self.truncated + top;
                }
            }
            JumpKind::Departure => {
                let bottom = self.q.remove(0);
                self.q.push(S::zero());
                self.failed = self.failed + bottom;
            }
        }
    }

    /// Advances the distribution to `t1` under the rates of the piece that
    /// starts at `self.t`.
    ///
    /// The interval must not contain an intensity breakpoint or a rebalancing
    /// jump in its interior.
    pub fn step_smooth(&self, profile: &StationFlowProfile, t1: f64) -> Result<Self> {
        let t0 = self.t;
        if !(t1 >= t0) || t1 > profile.horizon() {
            return Err(Error::OutsideHorizon { t: t1, horizon: profile.horizon() });
        }
        let interior = profile
            .lambda_a
            .interior_breakpoints()
            .iter()
            .chain(profile.lambda_d.interior_breakpoints())
            .chain(&profile.rho_a)
            .chain(&profile.rho_d)
            .find(|&&b| b > t0 && b < t1);
        if let Some(&t) = interior {
            return Err(Error::InteriorBreakpoint { t, t0, t1 });
        }
        let mut out = self.clone();
        out.advance(profile.lambda_a.eval(t0)?, profile.lambda_d.eval(t0)?, t1)?;
        Ok(out)
    }

    fn advance(&mut self, arrival_rate: f64, departure_rate: f64, t1: f64) -> Result<()> {
        if arrival_rate < 0.0 || departure_rate < 0.0 {
            return Err(Error::InvalidInput("negative station rate".into()));
        }
        let rate = arrival_rate + departure_rate;
        let dt = t1 - self.t;
        if rate > 0.0 && dt > 0.0 {
            let chain = BirthDeath {
                up: S::of(arrival_rate / rate),
                down: S::of(departure_rate / rate),
                capacity_failures: self.capacity_failures,
            };
            let mut sinks = [S::zero(); SINKS];
            propagate(&chain, rate, dt, &mut self.q, &mut sinks);
            self.failed = self.failed + sinks[FAILURE_SINK];
            self.truncated = self.truncated + sinks[TRUNCATION_SINK];
            self.sanitize()?;
        }
        self.t = t1;
        Ok(())
    }

    /// Clamps rounding noise below zero; larger negative entries or mass
    /// drift indicate an integration error.
    fn sanitize(&mut self) -> Result<()> {
        let floor = S::of(-1e-12);
        for x in self.q.iter_mut() {
            if *x < S::zero() {
                if *x < floor {
                    return Err(Error::Invariant(format!("negative probability {x} at t={}", self.t)));
                }
                *x = S::zero();
            }
        }
        let drift = (self.total_mass() - S::one()).abs();
        if drift.as_f64() > mass_tolerance::<S>() {
            return Err(Error::Invariant(format!("station mass drifted by {drift} at t={}", self.t)));
        }
        Ok(())
    }
}

fn mass_tolerance<S: Scalar>() -> f64 {
    MASS_TOLERANCE.max(S::epsilon().as_f64() * 1e4)
}

struct BirthDeath<S> {
    up: S,
    down: S,
    capacity_failures: bool,
}

impl<S: Scalar> JumpChain<S> for BirthDeath<S> {
    fn step(&self, x: &[S], out: &mut [S]) -> [S; SINKS] {
        let n = x.len();
        for j in 0..n {
            let from_below = if j > 0 { x[j - 1] * self.up } else { S::zero() };
            let from_above = if j + 1 < n { x[j + 1] * self.down } else { S::zero() };
            out[j] = from_below + from_above;
        }
        let mut sinks = [S::zero(); SINKS];
        sinks[FAILURE_SINK] = x[0] * self.down;
        let over_top = x[n - 1] * self.up;
        if self.capacity_failures {
            sinks[FAILURE_SINK] = sinks[FAILURE_SINK] + over_top;
        } else {
            sinks[TRUNCATION_SINK] = over_top;
        }
        sinks
    }
}

/// Transient evaluator for one station's flow profile.
#[derive(Debug, Clone)]
pub struct StationEvaluator<'a> {
    profile: &'a StationFlowProfile,
    timeline: Vec<TimelineEvent>,
    tail_tolerance: f64,
}

impl<'a> StationEvaluator<'a> {
    pub fn new(profile: &'a StationFlowProfile) -> Self {
        Self { profile, timeline: merged_event_timeline(profile), tail_tolerance: DEFAULT_TAIL_TOLERANCE }
    }

    /// Bound on truncated mass in unbounded mode. Sizing sets this to a
    /// small fraction of the station budget.
    pub fn with_tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn profile(&self) -> &StationFlowProfile {
        self.profile
    }

    /// Initial working ceiling for unbounded mode.
    pub fn initial_working_capacity(&self, v: u32, horizon: f64) -> usize {
        let inflow = self.profile.expected_arrivals(horizon);
        let jumps = self.profile.rho_a.iter().filter(|&&t| t <= horizon).count() as f64;
        let base = v as f64 + inflow.ceil() + (10.0 * (v as f64 + inflow).sqrt()).ceil() + jumps;
        base.max(1.0) as usize
    }

    /// Failure probability `qF(T; v, c)`.
    pub fn failure_probability<S: Scalar>(&self, v: u32, capacity: Capacity, horizon: f64) -> Result<S> {
        Ok(self.final_distribution::<S>(v, capacity, horizon)?.failed)
    }

    /// Distribution at `horizon` starting from `v` vehicles at time zero.
    pub fn final_distribution<S: Scalar>(
        &self,
        v: u32,
        capacity: Capacity,
        horizon: f64,
    ) -> Result<StationDistribution<S>> {
        let mut out = self.trajectory::<S>(v, capacity, &[horizon])?;
        Ok(out.pop().expect("one sample requested"))
    }

    /// Distributions at each of the ascending `sample_times`.
    pub fn trajectory<S: Scalar>(
        &self,
        v: u32,
        capacity: Capacity,
        sample_times: &[f64],
    ) -> Result<Vec<StationDistribution<S>>> {
        let horizon = self.profile.horizon();
        if let Some(&t) = sample_times.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::OutsideHorizon { t, horizon });
        }
        if sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("sample times must be ascending".into()));
        }
        let last = sample_times.last().copied().unwrap_or(0.0);
        match capacity {
            Capacity::Bounded(c) => {
                let start = StationDistribution::point_mass(v, c, 0.0)?;
                self.walk(start, sample_times)
            }
            Capacity::Unbounded => {
                let mut working = self.initial_working_capacity(v, last);
                loop {
                    let start = StationDistribution::<S>::unbounded(v, working, 0.0);
                    let samples = self.walk(start, sample_times)?;
                    let lost: f64 = samples.last().map_or(0.0, |d| d.truncated.as_f64());
                    if lost <= self.tail_tolerance {
                        return Ok(samples);
                    }
                    if working >= MAX_WORKING_CAPACITY {
                        return Err(Error::Invariant(format!(
                            "unbounded-capacity truncation did not converge (lost mass {lost})"
                        )));
                    }
                    working *= 2;
                }
            }
        }
    }

    fn walk<S: Scalar>(
        &self,
        mut dist: StationDistribution<S>,
        sample_times: &[f64],
    ) -> Result<Vec<StationDistribution<S>>> {
        let mut out = Vec::with_capacity(sample_times.len());
        let mut events = self.timeline.iter().peekable();
        let mut rates = (self.profile.lambda_a.eval(0.0)?, self.profile.lambda_d.eval(0.0)?);
        for &sample in sample_times {
            while let Some(ev) = events.next_if(|e| e.time <= sample) {
                dist.advance(rates.0, rates.1, ev.time)?;
                match ev.kind {
                    EventKind::Breakpoint => {
                        rates = (self.profile.lambda_a.eval(ev.time)?, self.profile.lambda_d.eval(ev.time)?);
                    }
                    EventKind::Arrival => dist.jump_in_place(JumpKind::Arrival),
                    EventKind::Departure => dist.jump_in_place(JumpKind::Departure),
                }
            }
            dist.advance(rates.0, rates.1, sample)?;
            out.push(dist.clone());
        }
        Ok(out)
    }
}

/// `qF(T; v, c)` for a single profile.
pub fn station_failure_probability<S: Scalar>(
    profile: &StationFlowProfile,
    v: u32,
    capacity: Capacity,
    horizon: f64,
) -> Result<S> {
    if let Capacity::Bounded(c) = capacity {
        if v > c {
            return Err(Error::StockExceedsCapacity { station: 0, v, c });
        }
    }
    StationEvaluator::new(profile).failure_probability(v, capacity, horizon)
}

/// Per-station failure masses and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledBound<S> {
    pub per_station: Vec<S>,
    /// Sum of the station masses. Not clamped: it is a bound, not a
    /// probability, and may exceed one.
    pub total: S,
}

fn station_profiles(model: &DemandModel, plan: &RebalancingPlan, with_delay: bool) -> Result<Vec<StationFlowProfile>> {
    model.stations().map(|s| aggregate_station_flows(model, plan, s, with_delay)).collect()
}

/// Sum over stations of the decoupled failure probabilities at `horizon`.
pub fn system_failure_upper_bound<S: Scalar>(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    horizon: f64,
    with_delay: bool,
) -> Result<DecoupledBound<S>> {
    design.check_stations(model.k())?;
    if horizon > model.horizon() {
        return Err(Error::OutsideHorizon { t: horizon, horizon: model.horizon() });
    }
    let profiles = station_profiles(model, plan, with_delay)?;
    let per_station: Vec<S> = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            station_failure_probability::<S>(p, design.stock()[i], Capacity::Bounded(design.capacity()[i]), horizon)
                .map_err(|e| relabel(e, i))
        })
        .collect::<Result<_>>()?;
    let total = compensated_sum(&per_station);
    Ok(DecoupledBound { per_station, total })
}

/// Per-station distributions at each sample time: `out[i][s]` is station
/// `i` at `sample_times[s]`.
pub fn bound_trajectories<S: Scalar>(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    sample_times: &[f64],
    with_delay: bool,
) -> Result<Vec<Vec<StationDistribution<S>>>> {
    design.check_stations(model.k())?;
    let profiles = station_profiles(model, plan, with_delay)?;
    profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            StationEvaluator::new(p)
                .trajectory::<S>(design.stock()[i], Capacity::Bounded(design.capacity()[i]), sample_times)
                .map_err(|e| relabel(e, i))
        })
        .collect()
}

/// Summed failure mass at each sample time.
pub fn bound_curve<S: Scalar>(trajectories: &[Vec<StationDistribution<S>>]) -> Vec<S> {
    let samples = trajectories.first().map_or(0, Vec::len);
    (0..samples)
        .map(|s| {
            let masses: Vec<S> = trajectories.iter().map(|tr| tr[s].failed).collect();
            compensated_sum(&masses)
        })
        .collect()
}

fn relabel(e: Error, index: usize) -> Error {
    match e {
        Error::StockExceedsCapacity { v, c, .. } => {
            Error::StockExceedsCapacity { station: StationId::from_index(index).label(), v, c }
        }
        other => other,
    }
}
