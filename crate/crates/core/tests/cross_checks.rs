use fleet_core::coupled::{coupled_trajectory, CoupledOptions};
use fleet_core::decoupled::{bound_curve, bound_trajectories, system_failure_upper_bound};
use fleet_core::formats::ModelDocument;
use fleet_core::ingest::{estimate_demand, extract_day_sequences, DayFilter};
use fleet_core::montecarlo::{estimate_failure_curve, run_ensemble, uniform_grid, McConfig};
use fleet_core::rebalance::plan_rebalancing;
use fleet_core::replay::{baseline_design, sweep, ReplayMode};
use fleet_core::sizing::{size_system, SearchStrategy, SizingRequest};
use fleet_core::synthetic::{city_model, may_2016, sample_trips, CityConfig};
use fleet_core::*;

fn small_city() -> DemandModel {
    city_model(&CityConfig { stations: 6, hubs: 1, daily_trips: 90.0, seed: 3, ..CityConfig::default() }).unwrap()
}

#[test]
fn monte_carlo_agrees_with_exact_coupled_model() {
    let mut model = DemandModel::new(3, 6.0).unwrap();
    let rate = PiecewiseConstantIntensity::new(vec![0.0, 2.0, 4.0], vec![0.4, 1.2, 0.6], 6.0).unwrap();
    for (o, d) in [(0, 1), (1, 2), (2, 0), (0, 2)] {
        model.set_rate(StationId::from_index(o), StationId::from_index(d), rate.clone()).unwrap();
    }
    let mut plan = RebalancingPlan::empty(3, 6.0);
    plan.set_instants(StationId::from_index(2), StationId::from_index(0), vec![1.5, 3.0]).unwrap();
    let design = SystemDesign::new(vec![2, 1, 2], vec![3, 3, 4]).unwrap();
    let grid = uniform_grid(6.0, 12);

    let exact = coupled_trajectory::<f64>(&model, &plan, &design, &grid, CoupledOptions::default()).unwrap();
    let config = McConfig { horizon: 6.0, with_delay: false, seed: 11 };
    let ens = run_ensemble(&model, &plan, &design, config, 40000, &grid, &[StationId::from_index(0)]).unwrap();
    for ((t, e), d) in ens.failure_curve().iter().zip(&exact) {
        assert!((e.mean - d.failed).abs() <= 4.0 * e.stderr.max(1e-4), "t={t}: MC {} vs exact {}", e.mean, d.failed);
    }
    let marginals = ens.marginals(0);
    for (s, d) in exact.iter().enumerate() {
        for (j, &p) in d.marginal(StationId::from_index(0)).iter().enumerate() {
            let e = marginals[s][j];
            assert!((e.mean - p).abs() <= 4.0 * e.stderr.max(1e-4), "t={}, j={j}: {} vs {p}", d.t, e.mean);
        }
    }
}

#[test]
fn delayed_bound_dominates_delayed_simulation() {
    let model = small_city();
    let plan = plan_rebalancing(&model, 1.0).unwrap();
    let design = SystemDesign::uniform(6, 4, 9).unwrap();
    let grid = uniform_grid(24.0, 24);
    let bound = bound_curve(&bound_trajectories::<f64>(&model, &plan, &design, &grid, true).unwrap());
    let config = McConfig { horizon: 24.0, with_delay: true, seed: 5 };
    let mc = estimate_failure_curve(&model, &plan, &design, config, 5000, &grid).unwrap();
    for ((t, e), b) in mc.iter().zip(&bound) {
        assert!(*b >= e.mean - 3.0 * e.stderr, "t={t}: bound {b} vs MC {}", e.mean);
    }
}

#[test]
fn single_precision_tracks_double() {
    let model = small_city();
    let plan = RebalancingPlan::empty(6, 24.0);
    let design = SystemDesign::uniform(6, 5, 10).unwrap();
    let b64 = system_failure_upper_bound::<f64>(&model, &plan, &design, 24.0, true).unwrap();
    let b32 = system_failure_upper_bound::<f32>(&model, &plan, &design, 24.0, true).unwrap();
    assert!((f64::from(b32.total) - b64.total).abs() < 1e-4 * b64.total.max(1e-3));
}

#[test]
fn sized_design_survives_json_and_reevaluation() {
    let model = small_city();
    let text = serde_json::to_string(&ModelDocument::from_model(&model)).unwrap();
    let reloaded = serde_json::from_str::<ModelDocument>(&text).unwrap().model().unwrap();
    assert_eq!(reloaded, model);

    let plan = plan_rebalancing(&reloaded, 2.0).unwrap();
    let request = SizingRequest::uniform(0.02, 6, 24.0).unwrap();
    let result = size_system(&reloaded, &plan, &request, true, SearchStrategy::Coordinate).unwrap();
    let again = system_failure_upper_bound::<f64>(&model, &plan, &result.design(), 24.0, true).unwrap();
    assert!(again.total <= 0.02);
    for (s, q) in result.stations.iter().zip(&again.per_station) {
        assert!(s.v <= s.c);
        assert_eq!(s.qf, *q);
        assert!(*q <= s.budget);
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        cov / (sx * sy)
    }
}

#[test]
fn sweep_curves_on_replayed_days() {
    let cfg = CityConfig { stations: 12, hubs: 2, daily_trips: 250.0, ..CityConfig::default() };
    let truth = city_model(&cfg).unwrap();
    let trips = sample_trips(&truth, &may_2016(), 0.5, 8).unwrap();
    let model = estimate_demand(&trips, 12, 24.0, 1.0, DayFilter::default()).unwrap().model;
    let days = extract_day_sequences(&trips, DayFilter::default());
    let plan = RebalancingPlan::empty(12, 24.0);

    let caps: Vec<u32> = (1..=20).map(|h| 2 * h).collect();
    let baselines: Vec<(String, SystemDesign)> =
        caps.iter().map(|&c| (format!("C={c}"), baseline_design(12, c))).collect();
    let rows = sweep(&baselines, &days, &plan, model.travel_times(), ReplayMode::Overflow).unwrap();
    let x: Vec<f64> = caps.iter().map(|&c| f64::from(c)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.failure_rate).collect();
    assert!(spearman(&x, &y) <= 0.0, "failure rate should fall with capacity: {y:?}");

    let proposed: Vec<(String, SystemDesign)> = [0.5, 0.2, 0.1, 0.05, 0.01]
        .iter()
        .map(|&z| {
            let req = SizingRequest::uniform(z, 12, 24.0).unwrap();
            (format!("z={z}"), size_system(&model, &plan, &req, true, SearchStrategy::Coordinate).unwrap().design())
        })
        .collect();
    let rows = sweep(&proposed, &days, &plan, model.travel_times(), ReplayMode::Overflow).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows
        .windows(2)
        .all(|w| w[1].total_fleet >= w[0].total_fleet && w[1].total_capacity >= w[0].total_capacity));
}
