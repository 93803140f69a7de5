//! Exact transient solution of the joint stock process over all stations.
//!
//! The state is the tuple of per-station stocks. Every customer request or
//! rebalancing relocation from `o` to `d` moves one vehicle, unless `o` is
//! empty or `d` is full, in which case the system drops into the absorbing
//! failure state. Travel delay is neglected, so the fleet size is conserved
//! and only the slice `sum(m) = sum(v)` is ever reachable; that slice is all
//! we store.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{DemandModel, RebalancingPlan, StationId, SystemDesign};
use crate::scalar::{compensated_sum, Scalar};
use crate::transient::{propagate, JumpChain, FAILURE_SINK, SINKS};

/// Default cap on `prod(c_i + 1)`.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// Tolerated drift of `sum(p) + pF` away from one.
pub const MASS_TOLERANCE: f64 = 1e-8;

const UNREACHABLE: u32 = u32::MAX;

/// Relocation of one vehicle from `o` to `d`, ignoring stock limits.
pub fn apply_t(m: &[i64], o: StationId, d: StationId) -> Vec<i64> {
    let mut out = m.to_vec();
    if o != d {
        out[o.index()] -= 1;
        out[d.index()] += 1;
    }
    out
}

/// Inverse of [`apply_t`].
pub fn apply_t_inverse(m: &[i64], o: StationId, d: StationId) -> Vec<i64> {
    apply_t(m, d, o)
}

/// Enumerated stock tuples on the fixed-fleet slice.
#[derive(Debug)]
pub struct StateSpace {
    capacities: Vec<u32>,
    fleet: u32,
    strides: Vec<usize>,
    lookup: Vec<u32>,
    states: Vec<u32>,
    full_index: Vec<usize>,
}

impl StateSpace {
    pub fn new(capacities: &[u32], fleet: u32, cap: usize) -> Result<Self> {
        let full: u128 = capacities.iter().map(|&c| c as u128 + 1).product();
        if full > cap as u128 {
            return Err(Error::StateSpaceTooLarge { states: full, cap });
        }
        let k = capacities.len();
        let mut strides = vec![1usize; k];
        for i in (0..k.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (capacities[i + 1] as usize + 1);
        }
        let mut space = Self {
            capacities: capacities.to_vec(),
            fleet,
            strides,
            lookup: vec![UNREACHABLE; full as usize],
            states: Vec::new(),
            full_index: Vec::new(),
        };
        let mut m = vec![0u32; k];
        space.enumerate(0, fleet, &mut m);
        Ok(space)
    }

    fn enumerate(&mut self, i: usize, remaining: u32, m: &mut Vec<u32>) {
        let k = self.capacities.len();
        if i + 1 == k {
            if remaining <= self.capacities[i] {
                m[i] = remaining;
                let full: usize = m.iter().zip(&self.strides).map(|(&x, &s)| x as usize * s).sum();
                self.lookup[full] = self.full_index.len() as u32;
                self.full_index.push(full);
                self.states.extend_from_slice(m);
            }
            return;
        }
        for x in 0..=self.capacities[i].min(remaining) {
            m[i] = x;
            self.enumerate(i + 1, remaining - x, m);
        }
    }

    pub fn k(&self) -> usize {
        self.capacities.len()
    }

    pub fn len(&self) -> usize {
        self.full_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full_index.is_empty()
    }

    pub fn fleet(&self) -> u32 {
        self.fleet
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn state(&self, idx: usize) -> &[u32] {
        let k = self.k();
        &self.states[idx * k..(idx + 1) * k]
    }

    pub fn index_of(&self, m: &[u32]) -> Option<usize> {
        if m.len() != self.k() || m.iter().zip(&self.capacities).any(|(x, c)| x > c) {
            return None;
        }
        let full: usize = m.iter().zip(&self.strides).map(|(&x, &s)| x as usize * s).sum();
        match self.lookup[full] {
            UNREACHABLE => None,
            idx => Some(idx as usize),
        }
    }

    /// Slice index reached by moving one vehicle `o -> d` from state `idx`,
    /// or `None` when the move fails (empty origin or full destination).
    fn relocate(&self, idx: usize, o: usize, d: usize) -> Option<usize> {
        let m = self.state(idx);
        if m[o] == 0 || m[d] == self.capacities[d] {
            return None;
        }
        let full = self.full_index[idx] - self.strides[o] + self.strides[d];
        Some(self.lookup[full] as usize)
    }
}

/// Joint stock distribution on the fixed-fleet slice plus absorbed failure.
#[derive(Debug, Clone)]
pub struct CoupledDistribution<S> {
    space: Arc<StateSpace>,
    pub p: Vec<S>,
    pub failed: S,
    pub t: f64,
}

impl<S: Scalar> CoupledDistribution<S> {
    /// Unit mass at the initial stocks `v`.
    pub fn initial(space: Arc<StateSpace>, v: &[u32]) -> Result<Self> {
        let idx = space
            .index_of(v)
            .ok_or_else(|| Error::InvalidInput(format!("initial stocks {v:?} not in the state space")))?;
        let mut p = vec![S::zero(); space.len()];
        p[idx] = S::one();
        Ok(Self { space, p, failed: S::zero(), t: 0.0 })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn total_mass(&self) -> S {
        compensated_sum(&self.p) + self.failed
    }

    /// Probability of state `m` (zero outside the reachable slice).
    pub fn probability(&self, m: &[u32]) -> S {
        self.space.index_of(m).map_or_else(S::zero, |i| self.p[i])
    }

    /// `P(V_i = j)` for `j = 0..=c_i`.
    pub fn marginal(&self, station: StationId) -> Vec<S> {
        let i = station.index();
        let mut out = vec![S::zero(); self.space.capacities[i] as usize + 1];
        for (idx, &mass) in self.p.iter().enumerate() {
            let j = self.space.state(idx)[i] as usize;
            out[j] = out[j] + mass;
        }
        out
    }

    /// Relocation jump `o -> d`: failing states are absorbed, the rest move.
    pub fn apply_rebalance(&self, o: StationId, d: StationId) -> Self {
        let mut out = self.clone();
        out.rebalance_in_place(o.index(), d.index());
        out
    }

    fn rebalance_in_place(&mut self, o: usize, d: usize) {
        if o == d {
            return;
        }
        let mut next = vec![S::zero(); self.p.len()];
        let mut absorbed = Vec::new();
        for (idx, &mass) in self.p.iter().enumerate() {
            if mass == S::zero() {
                continue;
            }
            match self.space.relocate(idx, o, d) {
                Some(to) => next[to] = next[to] + mass,
                None => absorbed.push(mass),
            }
        }
        self.failed = self.failed + compensated_sum(&absorbed);
        self.p = next;
    }

    /// Advances to `t1` under the demand rates of the piece starting at `self.t`.
    pub fn step_smooth(&self, model: &DemandModel, t1: f64) -> Result<Self> {
        let t0 = self.t;
        if !(t1 >= t0) || t1 > model.horizon() {
            return Err(Error::OutsideHorizon { t: t1, horizon: model.horizon() });
        }
        if let Some(t) = model.breakpoints().into_iter().find(|&b| b > t0 && b < t1) {
            return Err(Error::InteriorBreakpoint { t, t0, t1 });
        }
        let mut out = self.clone();
        let rates = PairRates::at(model, t0)?;
        out.advance(&rates, t1)?;
        Ok(out)
    }

    fn advance(&mut self, rates: &PairRates, t1: f64) -> Result<()> {
        let dt = t1 - self.t;
        if rates.total > 0.0 && dt > 0.0 {
            let chain = CoupledChain {
                space: &self.space,
                pairs: rates.pairs.iter().map(|&(o, d, r)| (o, d, S::of(r / rates.total))).collect(),
            };
            let mut sinks = [S::zero(); SINKS];
            propagate(&chain, rates.total, dt, &mut self.p, &mut sinks);
            self.failed = self.failed + sinks[FAILURE_SINK];
            for x in self.p.iter_mut() {
                if *x < S::zero() {
                    *x = S::zero();
                }
            }
        }
        self.t = t1;
        let drift = (self.total_mass() - S::one()).abs().as_f64();
        if drift > MASS_TOLERANCE.max(S::epsilon().as_f64() * 1e4) {
            return Err(Error::Invariant(format!("coupled mass drifted by {drift} at t={}", self.t)));
        }
        Ok(())
    }
}

struct PairRates {
    pairs: Vec<(usize, usize, f64)>,
    total: f64,
}

impl PairRates {
    fn at(model: &DemandModel, t: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        for (o, d, l) in model.active_pairs() {
            let r = l.eval(t)?;
            if r > 0.0 {
                pairs.push((o, d, r));
            }
        }
        let total = pairs.iter().map(|p| p.2).sum();
        Ok(Self { pairs, total })
    }
}

struct CoupledChain<'a, S> {
    space: &'a StateSpace,
    pairs: Vec<(usize, usize, S)>,
}

impl<S: Scalar> JumpChain<S> for CoupledChain<'_, S> {
    fn step(&self, x: &[S], out: &mut [S]) -> [S; SINKS] {
        out.iter_mut().for_each(|y| *y = S::zero());
        let mut failed = S::zero();
        for (idx, &mass) in x.iter().enumerate() {
            if mass == S::zero() {
                continue;
            }
            for &(o, d, prob) in &self.pairs {
                match self.space.relocate(idx, o, d) {
                    Some(to) => out[to] = out[to] + mass * prob,
                    None => failed = failed + mass * prob,
                }
            }
        }
        let mut sinks = [S::zero(); SINKS];
        sinks[FAILURE_SINK] = failed;
        sinks
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoupledOptions {
    pub state_cap: usize,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self { state_cap: DEFAULT_STATE_CAP }
    }
}

enum CoupledEvent {
    Breakpoint,
    Relocation(usize, usize),
}

/// Joint distributions at each ascending sample time. Travel times in the
/// model are ignored.
pub fn coupled_trajectory<S: Scalar>(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    sample_times: &[f64],
    options: CoupledOptions,
) -> Result<Vec<CoupledDistribution<S>>> {
    design.check_stations(model.k())?;
    if plan.k() != model.k() {
        return Err(Error::InvalidInput("plan and model station counts differ".into()));
    }
    let horizon = model.horizon();
    if let Some(&t) = sample_times.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::OutsideHorizon { t, horizon });
    }
    let fleet = design.total_fleet();
    let fleet = u32::try_from(fleet).map_err(|_| Error::InvalidInput("fleet too large".into()))?;
    let space = Arc::new(StateSpace::new(design.capacity(), fleet, options.state_cap)?);
    let mut dist = CoupledDistribution::<S>::initial(space, design.stock())?;

    let mut events: Vec<(f64, CoupledEvent)> =
        model.breakpoints().into_iter().map(|t| (t, CoupledEvent::Breakpoint)).collect();
    events.extend(plan.relocations().into_iter().map(|(t, o, d)| (t, CoupledEvent::Relocation(o, d))));
    // Stable sort keeps breakpoints ahead of relocations at equal times.
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rates = PairRates::at(model, 0.0)?;
    let mut cursor = events.iter().peekable();
    let mut out = Vec::with_capacity(sample_times.len());
    for &sample in sample_times {
        while let Some((t, ev)) = cursor.next_if(|e| e.0 <= sample) {
            dist.advance(&rates, *t)?;
            match ev {
                CoupledEvent::Breakpoint => rates = PairRates::at(model, *t)?,
                CoupledEvent::Relocation(o, d) => dist.rebalance_in_place(*o, *d),
            }
        }
        dist.advance(&rates, sample)?;
        out.push(dist.clone());
    }
    Ok(out)
}

/// Exact `pF(T)` for the coupled process.
pub fn coupled_failure_probability<S: Scalar>(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    horizon: f64,
    options: CoupledOptions,
) -> Result<S> {
    let mut tr = coupled_trajectory::<S>(model, plan, design, &[horizon], options)?;
    Ok(tr.pop().expect("one sample").failed)
}
