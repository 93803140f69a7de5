//! Uniformization for CTMCs whose every transient state leaves at the same
//! total rate.
//!
//! Both the per-station birth-death chain and the coupled chain have this
//! shape: each state emits the full demand rate, split between moves to
//! other transient states and moves into absorbing sinks. With the
//! uniformization rate equal to that common exit rate, the jump chain has a
//! zero diagonal and the transient solution over `dt` is
//! `sum_n Poisson(n; rate*dt) * x P^n`.

use crate::scalar::Scalar;

/// Number of absorbing sinks tracked alongside the transient vector.
pub const SINKS: usize = 2;
/// Sink index for system failure.
pub const FAILURE_SINK: usize = 0;
/// Sink index for mass leaving through an artificial truncation ceiling.
pub const TRUNCATION_SINK: usize = 1;

/// One step of a uniformized jump chain.
pub trait JumpChain<S: Scalar> {
    /// Overwrites `out` with `x P` on the transient states and returns the
    /// mass that moved into each sink during the step.
    fn step(&self, x: &[S], out: &mut [S]) -> [S; SINKS];
}

/// Advances `x` (and the sink masses) by `dt` under a chain whose states all
/// exit at `rate`.
///
/// Poisson weights are truncated once they fall below machine precision
/// past the mode; the leftover weight is assigned to the last iterate, so
/// total mass is conserved up to rounding.
pub fn propagate<S: Scalar, C: JumpChain<S>>(chain: &C, rate: f64, dt: f64, x: &mut [S], sinks: &mut [S; SINKS]) {
    let exponent = rate * dt;
    if !(exponent > 0.0) {
        return;
    }
    let sweeps = (exponent / S::MAX_SWEEP_EXPONENT).ceil().max(1.0) as usize;
    let mu = exponent / sweeps as f64;
    let mu_s = S::of(mu);
    let cutoff = S::epsilon() * S::of(1e-3);
    let max_terms = (mu + 12.0 * mu.sqrt() + 40.0).ceil() as usize;

    let mut w = vec![S::zero(); x.len()];
    let mut next = vec![S::zero(); x.len()];
    let mut acc = vec![S::zero(); x.len()];
    for _ in 0..sweeps {
        w.copy_from_slice(x);
        let mut absorbed = [S::zero(); SINKS];
        let mut acc_sinks = [S::zero(); SINKS];
        let mut weight = S::of((-mu).exp());
        let mut cumulative = weight;
        for (a, &wi) in acc.iter_mut().zip(w.iter()) {
            *a = weight * wi;
        }
        let mut n = 0usize;
        loop {
            n += 1;
            if n > max_terms || (n as f64 > mu && weight < cutoff) {
                break;
            }
            let moved = chain.step(&w, &mut next);
            std::mem::swap(&mut w, &mut next);
            for s in 0..SINKS {
                absorbed[s] = absorbed[s] + moved[s];
            }
            weight = weight * mu_s / S::of(n as f64);
            cumulative = cumulative + weight;
            for (a, &wi) in acc.iter_mut().zip(w.iter()) {
                *a = *a + weight * wi;
            }
            for s in 0..SINKS {
                acc_sinks[s] = acc_sinks[s] + weight * absorbed[s];
            }
        }
        let rest = (S::one() - cumulative).max(S::zero());
        for (a, &wi) in acc.iter_mut().zip(w.iter()) {
            *a = *a + rest * wi;
        }
        for s in 0..SINKS {
            acc_sinks[s] = acc_sinks[s] + rest * absorbed[s];
            sinks[s] = sinks[s] + acc_sinks[s];
        }
        x.copy_from_slice(&acc);
    }
}

/// Poisson probability mass `P(N = n)` for `N ~ Poisson(mean)`, evaluated in
/// log space.
pub fn poisson_pmf(mean: f64, n: u64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
    (n as f64 * mean.ln() - mean - ln_fact).exp()
}

/// `P(N >= n)` for `N ~ Poisson(mean)` by direct series summation.
pub fn poisson_upper_tail(mean: f64, n: u64) -> f64 {
    let below: f64 = (0..n).map(|j| poisson_pmf(mean, j)).sum();
    (1.0 - below).max(0.0)
}
