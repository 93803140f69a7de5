//! Event-driven Monte Carlo simulation of the joint stock process.
//!
//! Requests for every origin-destination pair are drawn by thinning against
//! the pair's maximum rate. A run stops at the first availability or
//! capacity failure, matching the absorbing failure state of the exact
//! model.
//!
//! Streams: run `r` of an ensemble uses seed `seed0 + r`; inside a run the
//! pair `(o, d)` draws from ChaCha8 stream `o * k + d` of that seed. Runs are
//! therefore reproducible regardless of how they are scheduled.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DemandModel, PiecewiseConstantIntensity, RebalancingPlan, StationId, SystemDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureKind {
    /// A vehicle was requested at an empty station.
    Availability,
    /// A vehicle arrived at a full station.
    Capacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub seed: u64,
    pub failed_at: Option<f64>,
    pub failure: Option<(FailureKind, StationId)>,
    /// Stocks at each requested sample time; `None` once the run has failed.
    pub snapshots: Vec<Option<Vec<u32>>>,
}

/// Bernoulli proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl EstimateWithCI {
    pub fn from_counts(hits: u64, n: u64) -> Self {
        let mean = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        let stderr = if n == 0 { 0.0 } else { (mean * (1.0 - mean) / n as f64).sqrt() };
        Self { mean, stderr, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub horizon: f64,
    pub with_delay: bool,
    pub seed: u64,
}

/// Request instants of one pair in one run, drawn by thinning.
pub fn request_times(intensity: &PiecewiseConstantIntensity, horizon: f64, run_seed: u64, stream: u64) -> Vec<f64> {
    let peak = intensity.max_value();
    if peak <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream);
    let gap = Exp::new(peak).expect("positive rate");
    let pieces: Vec<(f64, f64, f64)> = intensity.pieces().collect();
    let mut piece = 0;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t > horizon {
            break;
        }
        while piece + 1 < pieces.len() && t >= pieces[piece].1 {
            piece += 1;
        }
        let rate = pieces[piece].2;
        if rate >= peak || rng.random::<f64>() * peak < rate {
            out.push(t);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Departure {
    t: f64,
    o: u32,
    d: u32,
    rebalance: bool,
}

impl Departure {
    fn order(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.o.cmp(&other.o))
            .then(self.d.cmp(&other.d))
            .then(self.rebalance.cmp(&other.rebalance))
    }
}

#[derive(Clone, Copy, Debug)]
struct PendingArrival {
    t: f64,
    d: u32,
}

impl PartialEq for PendingArrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for PendingArrival {}
impl PartialOrd for PendingArrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PendingArrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.d.cmp(&other.d))
    }
}

/// Pre-validated simulation inputs shared by all runs.
pub struct Simulator<'a> {
    model: &'a DemandModel,
    design: &'a SystemDesign,
    pairs: Vec<(usize, usize, &'a PiecewiseConstantIntensity)>,
    relocations: Vec<(f64, usize, usize)>,
    horizon: f64,
    with_delay: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a DemandModel,
        plan: &'a RebalancingPlan,
        design: &'a SystemDesign,
        horizon: f64,
        with_delay: bool,
    ) -> Result<Self> {
        design.check_stations(model.k())?;
        if plan.k() != model.k() {
            return Err(Error::InvalidInput("plan and model station counts differ".into()));
        }
        if !(horizon > 0.0 && horizon <= model.horizon()) {
            return Err(Error::OutsideHorizon { t: horizon, horizon: model.horizon() });
        }
        let relocations = plan.relocations().into_iter().filter(|r| r.0 <= horizon).collect();
        Ok(Self { model, design, pairs: model.active_pairs().collect(), relocations, horizon, with_delay })
    }

    /// Requests of every active pair for the run seeded with `seed`, as
    /// `(origin, destination, times)`.
    pub fn requests(&self, seed: u64) -> Vec<(usize, usize, Vec<f64>)> {
        let k = self.model.k() as u64;
        self.pairs
            .iter()
            .map(|&(o, d, l)| (o, d, request_times(l, self.horizon, seed, o as u64 * k + d as u64)))
            .collect()
    }

    /// Runs one trajectory. `observe(s, stocks)` is called for every sample
    /// index reached before failure. Returns the failure, if any.
    pub fn run_with<F>(&self, seed: u64, sample_times: &[f64], mut observe: F) -> Option<(f64, FailureKind, StationId)>
    where
        F: FnMut(usize, &[u32]),
    {
        let mut departures: Vec<Departure> = Vec::new();
        for (o, d, times) in self.requests(seed) {
            departures.extend(times.into_iter().map(|t| Departure { t, o: o as u32, d: d as u32, rebalance: false }));
        }
        departures.extend(self.relocations.iter().map(|&(t, o, d)| Departure {
            t,
            o: o as u32,
            d: d as u32,
            rebalance: true,
        }));
        departures.sort_by(Departure::order);

        let caps = self.design.capacity();
        let mut stock = self.design.stock().to_vec();
        let mut pending: BinaryHeap<Reverse<PendingArrival>> = BinaryHeap::new();
        let mut next_sample = 0;
        let mut deps = departures.iter().peekable();

        loop {
            let arrival_first = match (pending.peek(), deps.peek()) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(Reverse(a)), Some(dep)) => a.t <= dep.t,
            };
            let t = if arrival_first { pending.peek().unwrap().0.t } else { deps.peek().unwrap().t };
            if t > self.horizon {
                break;
            }
            while next_sample < sample_times.len() && sample_times[next_sample] < t {
                observe(next_sample, &stock);
                next_sample += 1;
            }
            if arrival_first {
                let Reverse(a) = pending.pop().unwrap();
                let d = a.d as usize;
                if stock[d] >= caps[d] {
                    return Some((t, FailureKind::Capacity, StationId::from_index(d)));
                }
                stock[d] += 1;
            } else {
                let dep = deps.next().unwrap();
                let (o, d) = (dep.o as usize, dep.d as usize);
                if stock[o] == 0 {
                    return Some((t, FailureKind::Availability, StationId::from_index(o)));
                }
                if self.with_delay {
                    stock[o] -= 1;
                    pending.push(Reverse(PendingArrival { t: t + self.model.travel_time(o, d), d: dep.d }));
                } else {
                    if stock[d] >= caps[d] {
                        return Some((t, FailureKind::Capacity, StationId::from_index(d)));
                    }
                    stock[o] -= 1;
                    stock[d] += 1;
                }
            }
        }
        while next_sample < sample_times.len() && sample_times[next_sample] <= self.horizon {
            observe(next_sample, &stock);
            next_sample += 1;
        }
        None
    }

    pub fn run(&self, seed: u64, sample_times: &[f64]) -> SimulationRun {
        let mut snapshots = vec![None; sample_times.len()];
        let failure = self.run_with(seed, sample_times, |s, stock| snapshots[s] = Some(stock.to_vec()));
        SimulationRun { seed, failed_at: failure.map(|f| f.0), failure: failure.map(|f| (f.1, f.2)), snapshots }
    }
}

/// One trajectory of the coupled process.
pub fn simulate_run(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    horizon: f64,
    seed: u64,
    with_delay: bool,
    sample_times: &[f64],
) -> Result<SimulationRun> {
    Ok(Simulator::new(model, plan, design, horizon, with_delay)?.run(seed, sample_times))
}

/// Aggregated counts over an ensemble of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub n_runs: u64,
    pub sample_times: Vec<f64>,
    /// Runs failed at or before each sample time.
    pub failures: Vec<u64>,
    /// `occupancy[s][t][j]`: runs with `j` vehicles at tracked station `s`
    /// at sample `t`.
    pub occupancy: Vec<Vec<Vec<u64>>>,
    pub stations: Vec<StationId>,
}

impl Ensemble {
    pub fn failure_curve(&self) -> Vec<(f64, EstimateWithCI)> {
        self.sample_times
            .iter()
            .zip(&self.failures)
            .map(|(&t, &hits)| (t, EstimateWithCI::from_counts(hits, self.n_runs)))
            .collect()
    }

    /// Per-sample, per-state occupancy estimates for the `s`-th tracked station.
    pub fn marginals(&self, s: usize) -> Vec<Vec<EstimateWithCI>> {
        self.occupancy[s]
            .iter()
            .map(|row| row.iter().map(|&c| EstimateWithCI::from_counts(c, self.n_runs)).collect())
            .collect()
    }
}

/// Runs seeds `config.seed .. config.seed + n_runs` in parallel and counts
/// failures and occupancy of the tracked stations at each sample time.
pub fn run_ensemble(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    config: McConfig,
    n_runs: u64,
    sample_times: &[f64],
    stations: &[StationId],
) -> Result<Ensemble> {
    if n_runs == 0 {
        return Err(Error::InvalidInput("at least one run is required".into()));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("sample times must be ascending".into()));
    }
    for s in stations {
        if s.label() == 0 || s.label() > model.k() {
            return Err(Error::InvalidStation { station: s.label(), k: model.k() });
        }
    }
    let sim = Simulator::new(model, plan, design, config.horizon, config.with_delay)?;
    let n_samples = sample_times.len();
    let caps: Vec<usize> = stations.iter().map(|s| design.capacity()[s.index()] as usize).collect();
    let empty = || Ensemble {
        n_runs: 0,
        sample_times: sample_times.to_vec(),
        failures: vec![0; n_samples],
        occupancy: caps.iter().map(|&c| vec![vec![0; c + 1]; n_samples]).collect(),
        stations: stations.to_vec(),
    };

    // Integer counts make the reduction order-independent.
    let merged = (0..n_runs)
        .into_par_iter()
        .fold(empty, |mut acc, r| {
            let seed = config.seed.wrapping_add(r);
            let failure = sim.run_with(seed, sample_times, |s, stock| {
                for (slot, station) in stations.iter().enumerate() {
                    acc.occupancy[slot][s][stock[station.index()] as usize] += 1;
                }
            });
            if let Some((t, _, _)) = failure {
                let first = sample_times.partition_point(|&s| s < t);
                for f in &mut acc.failures[first..] {
                    *f += 1;
                }
            }
            acc.n_runs += 1;
            acc
        })
        .reduce(empty, |mut a, b| {
            a.n_runs += b.n_runs;
            a.failures.iter_mut().zip(&b.failures).for_each(|(x, y)| *x += y);
            for (sa, sb) in a.occupancy.iter_mut().zip(&b.occupancy) {
                for (ra, rb) in sa.iter_mut().zip(sb) {
                    ra.iter_mut().zip(rb).for_each(|(x, y)| *x += y);
                }
            }
            a
        });
    Ok(merged)
}

/// `p̂F(t)` with standard errors at each sample time.
pub fn estimate_failure_curve(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    config: McConfig,
    n_runs: u64,
    sample_times: &[f64],
) -> Result<Vec<(f64, EstimateWithCI)>> {
    Ok(run_ensemble(model, plan, design, config, n_runs, sample_times, &[])?.failure_curve())
}

/// Occupancy estimates `P̂(V_i(t) = j)` for one station; runs that already
/// failed count toward no state.
pub fn estimate_marginals(
    model: &DemandModel,
    plan: &RebalancingPlan,
    design: &SystemDesign,
    config: McConfig,
    n_runs: u64,
    station: StationId,
    sample_times: &[f64],
) -> Result<Vec<Vec<EstimateWithCI>>> {
    Ok(run_ensemble(model, plan, design, config, n_runs, sample_times, &[station])?.marginals(0))
}

/// Uniform sample grid `T/n, 2T/n, ..., T`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(label: usize) -> StationId {
        StationId::from_index(label - 1)
    }

    fn one_way(rate: f64, horizon: f64) -> DemandModel {
        let mut m = DemandModel::new(2, horizon).unwrap();
        m.set_rate(sid(1), sid(2), PiecewiseConstantIntensity::constant(rate, horizon).unwrap()).unwrap();
        m
    }

    #[test]
    fn zero_demand_never_fails() {
        let model = DemandModel::new(3, 24.0).unwrap();
        let plan = RebalancingPlan::empty(3, 24.0);
        let design = SystemDesign::new(vec![1, 2, 3], vec![4, 4, 4]).unwrap();
        let run = simulate_run(&model, &plan, &design, 24.0, 9, false, &[1.0, 12.0, 24.0]).unwrap();
        assert_eq!(run.failed_at, None);
        for s in run.snapshots {
            assert_eq!(s.unwrap(), vec![1, 2, 3]);
        }
    }

    #[test]
    fn two_state_chain_fails_on_second_request() {
        let model = one_way(1.0, 10.0);
        let plan = RebalancingPlan::empty(2, 10.0);
        let design = SystemDesign::new(vec![1, 0], vec![1, 1]).unwrap();
        let sim = Simulator::new(&model, &plan, &design, 10.0, false).unwrap();
        let mut checked = 0;
        for seed in 0..50 {
            let times = &sim.requests(seed)[0].2;
            let run = sim.run(seed, &[]);
            if times.len() >= 2 {
                assert_eq!(run.failed_at, Some(times[1]));
                assert_eq!(run.failure, Some((FailureKind::Availability, sid(1))));
                checked += 1;
            } else {
                assert_eq!(run.failed_at, None);
            }
        }
        assert!(checked > 40);
    }

    #[test]
    fn identical_seed_gives_identical_run() {
        let model = DemandModel::uniform(4, 0.8, 24.0).unwrap();
        let plan = RebalancingPlan::empty(4, 24.0);
        let design = SystemDesign::uniform(4, 3, 6).unwrap();
        let times = uniform_grid(24.0, 12);
        let a = simulate_run(&model, &plan, &design, 24.0, 77, true, &times).unwrap();
        let b = simulate_run(&model, &plan, &design, 24.0, 77, true, &times).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_delay_conserves_fleet_before_failure() {
        let model = DemandModel::uniform(5, 1.5, 24.0).unwrap();
        let plan = RebalancingPlan::empty(5, 24.0);
        let design = SystemDesign::uniform(5, 4, 8).unwrap();
        let sim = Simulator::new(&model, &plan, &design, 24.0, false).unwrap();
        let times = uniform_grid(24.0, 96);
        for seed in 0..20 {
            let run = sim.run(seed, &times);
            for (t, s) in times.iter().zip(&run.snapshots) {
                match s {
                    Some(stock) => assert_eq!(stock.iter().sum::<u32>(), 20),
                    None => assert!(run.failed_at.unwrap() <= *t),
                }
            }
        }
    }

    #[test]
    fn single_failing_run_is_a_step() {
        let model = one_way(3.0, 10.0);
        let plan = RebalancingPlan::empty(2, 10.0);
        let design = SystemDesign::new(vec![0, 0], vec![1, 1]).unwrap();
        let cfg = McConfig { horizon: 10.0, with_delay: false, seed: 4 };
        let times = uniform_grid(10.0, 100);
        let failed_at = simulate_run(&model, &plan, &design, 10.0, 4, false, &[]).unwrap().failed_at.unwrap();
        let curve = estimate_failure_curve(&model, &plan, &design, cfg, 1, &times).unwrap();
        for (t, est) in curve {
            assert_eq!(est.mean, if t >= failed_at { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn failure_curve_is_monotone() {
        let model = DemandModel::uniform(3, 1.0, 12.0).unwrap();
        let plan = RebalancingPlan::empty(3, 12.0);
        let design = SystemDesign::uniform(3, 2, 4).unwrap();
        let cfg = McConfig { horizon: 12.0, with_delay: false, seed: 0 };
        let curve = estimate_failure_curve(&model, &plan, &design, cfg, 500, &uniform_grid(12.0, 50)).unwrap();
        assert!(curve.windows(2).all(|w| w[0].1.mean <= w[1].1.mean));
        assert!(curve.last().unwrap().1.mean > 0.0);
    }

    #[test]
    fn marginals_partition_surviving_runs() {
        let model = DemandModel::uniform(3, 1.0, 6.0).unwrap();
        let plan = RebalancingPlan::empty(3, 6.0);
        let design = SystemDesign::uniform(3, 2, 4).unwrap();
        let cfg = McConfig { horizon: 6.0, with_delay: false, seed: 11 };
        let times = uniform_grid(6.0, 6);
        let stations: Vec<StationId> = model.stations().collect();
        let ens = run_ensemble(&model, &plan, &design, cfg, 400, &times, &stations).unwrap();
        for s in 0..3 {
            for (t, row) in ens.occupancy[s].iter().enumerate() {
                assert_eq!(row.iter().sum::<u64>() + ens.failures[t], 400);
            }
        }
    }

    #[test]
    fn zero_demand_marginal_is_point_mass() {
        let model = DemandModel::new(2, 5.0).unwrap();
        let plan = RebalancingPlan::empty(2, 5.0);
        let design = SystemDesign::new(vec![2, 1], vec![3, 3]).unwrap();
        let cfg = McConfig { horizon: 5.0, with_delay: false, seed: 0 };
        let m = estimate_marginals(&model, &plan, &design, cfg, 10, sid(1), &[2.5, 5.0]).unwrap();
        for row in m {
            assert_eq!(row[2].mean, 1.0);
            assert_eq!(row[2].stderr, 0.0);
        }
    }

    /// Kolmogorov-Smirnov distance of the sample from Exponential(rate).
    fn ks_exponential(mut xs: Vec<f64>, rate: f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-rate * x).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn thinning_gaps_are_exponential() {
        // Equal rates on both pieces: the piece boundary must not disturb the gaps.
        let l = PiecewiseConstantIntensity::new(vec![0.0, 50.0], vec![2.0, 2.0], 100.0).unwrap();
        let mut gaps = Vec::new();
        for seed in 0..40 {
            let ts = request_times(&l, 100.0, seed, 3);
            let mut prev = 0.0;
            for t in ts {
                gaps.push(t - prev);
                prev = t;
            }
        }
        let d = ks_exponential(gaps.clone(), 2.0);
        let critical = 1.628 / (gaps.len() as f64).sqrt();
        assert!(d < critical, "KS distance {d} vs critical {critical}");

        // Half-rate second piece: gaps there must be Exponential(1).
        let half = PiecewiseConstantIntensity::new(vec![0.0, 1.0], vec![2.0, 1.0], 200.0).unwrap();
        let mut gaps = Vec::new();
        for seed in 0..40 {
            let ts: Vec<f64> = request_times(&half, 200.0, seed, 0).into_iter().filter(|&t| t >= 1.0).collect();
            for w in ts.windows(2) {
                gaps.push(w[1] - w[0]);
            }
        }
        let d = ks_exponential(gaps.clone(), 1.0);
        assert!(d < 1.628 / (gaps.len() as f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn quadrupling_runs_halves_stderr() {
        let model = one_way(0.3, 4.0);
        let plan = RebalancingPlan::empty(2, 4.0);
        let design = SystemDesign::new(vec![1, 0], vec![2, 2]).unwrap();
        let cfg = McConfig { horizon: 4.0, with_delay: false, seed: 1 };
        let a = estimate_failure_curve(&model, &plan, &design, cfg, 2000, &[4.0]).unwrap()[0].1;
        let b = estimate_failure_curve(&model, &plan, &design, cfg, 8000, &[4.0]).unwrap()[0].1;
        let ratio = b.stderr / a.stderr;
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }
}
