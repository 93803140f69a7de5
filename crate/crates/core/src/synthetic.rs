//! Synthetic commuter city: an imbalanced, heterogeneous demand model and
//! trip logs sampled from it.
//!
//! A few hub stations sit near the centre and residential stations are
//! scattered around them. Demand mixes a symmetric background component with
//! a commute component that flows from residential stations into hubs in the
//! morning peak and back in the evening peak, so stock drains from one side
//! of the city to the other twice a day.

use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::ingest::TripRecord;
use crate::model::{DemandModel, PiecewiseConstantIntensity, StationId};
use crate::montecarlo::request_times;

/// Relative background activity per hour of day.
const BACKGROUND: [f64; 24] = [
    0.1, 0.05, 0.05, 0.05, 0.1, 0.2, 0.5, 0.8, 0.9, 0.8, 0.7, 0.8, 1.0, 1.0, 0.8, 0.8, 0.9, 1.0, 1.0, 0.9, 0.7, 0.5,
    0.3, 0.2,
];
const MORNING: std::ops::Range<usize> = 7..10;
const EVENING: std::ops::Range<usize> = 16..19;

/// Trip time: fixed undock/dock overhead plus distance ridden at 12 km/h.
const OVERHEAD_HOURS: f64 = 0.05;
const SPEED_KMH: f64 = 12.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    pub stations: usize,
    pub hubs: usize,
    /// Expected trips on a working day.
    pub daily_trips: f64,
    /// Share of trips belonging to the commute component.
    pub commute_share: f64,
    /// Demand multiplier applied on Saturdays and Sundays.
    pub weekend_factor: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            stations: 40,
            hubs: 4,
            daily_trips: 800.0,
            commute_share: 0.6,
            weekend_factor: 0.5,
            horizon: 24.0,
            seed: 2016,
        }
    }
}

/// Builds the hourly demand model of a synthetic city.
pub fn city_model(cfg: &CityConfig) -> Result<DemandModel> {
    let k = cfg.stations;
    if k < 2 || cfg.hubs == 0 || cfg.hubs >= k {
        return Err(Error::InvalidInput(format!("need 0 < hubs < stations, got {} of {k}", cfg.hubs)));
    }
    if cfg.horizon != 24.0 {
        return Err(Error::InvalidInput("synthetic cities use a 24 h day".into()));
    }
    if !(0.0..=1.0).contains(&cfg.commute_share) || !(cfg.daily_trips > 0.0) {
        return Err(Error::InvalidInput("commute share must lie in [0, 1] and daily trips be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spread = LogNormal::new(0.0, 0.6).expect("valid lognormal");

    let mut pos = Vec::with_capacity(k);
    let mut weight = Vec::with_capacity(k);
    for i in 0..k {
        let hub = i < cfg.hubs;
        let radius = if hub { rng.random_range(0.0..0.8) } else { rng.random_range(1.0..4.5) };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        pos.push((radius * angle.cos(), radius * angle.sin()));
        let w: f64 = spread.sample(&mut rng);
        weight.push(if hub { 3.0 * w } else { w });
    }

    let mut background = vec![0.0; k * k];
    let mut morning = vec![0.0; k * k];
    for o in 0..k {
        for d in (0..k).filter(|&d| d != o) {
            background[o * k + d] = weight[o] * weight[d];
            if o >= cfg.hubs && d < cfg.hubs {
                morning[o * k + d] = weight[o] * weight[d];
            }
        }
    }
    let bg_hours: f64 = BACKGROUND.iter().sum();
    let bg_scale = (1.0 - cfg.commute_share) * cfg.daily_trips / (background.iter().sum::<f64>() * bg_hours);
    // Morning and evening peaks carry equal halves of the commute trips.
    let peak_hours = MORNING.len() as f64;
    let commute_scale = 0.5 * cfg.commute_share * cfg.daily_trips / (morning.iter().sum::<f64>() * peak_hours);

    let mut model = DemandModel::new(k, cfg.horizon)?;
    for o in 0..k {
        for d in (0..k).filter(|&d| d != o) {
            let values = (0..24)
                .map(|h| {
                    let mut r = bg_scale * background[o * k + d] * BACKGROUND[h];
                    if MORNING.contains(&h) {
                        r += commute_scale * morning[o * k + d];
                    }
                    if EVENING.contains(&h) {
                        r += commute_scale * morning[d * k + o];
                    }
                    r
                })
                .collect();
            let (so, sd) = (StationId::from_index(o), StationId::from_index(d));
            model.set_rate(so, sd, PiecewiseConstantIntensity::from_bins(1.0, values, cfg.horizon)?.simplified())?;
            let dist = ((pos[o].0 - pos[d].0).powi(2) + (pos[o].1 - pos[d].1).powi(2)).sqrt();
            model.set_travel_time(so, sd, OVERHEAD_HOURS + dist / SPEED_KMH)?;
        }
    }
    Ok(model)
}

/// Every calendar day of May 2016.
pub fn may_2016() -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(2016, 5, 1).expect("valid date");
    first.iter_days().take_while(|d| d.month() == 5).collect()
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Samples trips for each date. Weekend rates are scaled by
/// `weekend_factor`; trip durations are the model travel time times a
/// lognormal factor with median 1.
pub fn sample_trips(
    model: &DemandModel,
    dates: &[NaiveDate],
    weekend_factor: f64,
    seed: u64,
) -> Result<Vec<TripRecord>> {
    if !(weekend_factor >= 0.0) {
        return Err(Error::InvalidInput(format!("weekend factor {weekend_factor} must be non-negative")));
    }
    let k = model.k();
    let horizon = model.horizon();
    let noise = LogNormal::new(0.0, 0.2).expect("valid lognormal");
    let mut trips = Vec::new();
    for (di, &date) in dates.iter().enumerate() {
        let day_seed = seed.wrapping_add(di as u64);
        let mut durations = ChaCha8Rng::seed_from_u64(day_seed);
        durations.set_stream((k * k) as u64);
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid time");
        for (o, d, f) in model.active_pairs() {
            let scaled;
            let intensity = if is_weekend(date) {
                scaled = PiecewiseConstantIntensity::new(
                    f.breakpoints().to_vec(),
                    f.values().iter().map(|v| v * weekend_factor).collect(),
                    horizon,
                )?;
                &scaled
            } else {
                f
            };
            for t in request_times(intensity, horizon, day_seed, (o * k + d) as u64) {
                let eta = model.travel_time(o, d) * noise.sample(&mut durations);
                let start = midnight + Duration::seconds((t * 3600.0).floor() as i64);
                let end = start + Duration::seconds((eta * 3600.0).round() as i64);
                trips.push(TripRecord {
                    start_time: start,
                    end_time: end,
                    start_station: StationId::from_index(o),
                    end_station: StationId::from_index(d),
                });
            }
        }
    }
    trips.sort_by(|a, b| {
        a.start_time
            .cmp(&b.start_time)
            .then(a.start_station.cmp(&b.start_station))
            .then(a.end_station.cmp(&b.end_station))
    });
    Ok(trips)
}

/// Writes trips in the ingest CSV schema, using station labels as raw ids.
pub fn write_trips_csv<W: Write>(out: W, trips: &[TripRecord]) -> Result<()> {
    const FMT: &str = "%Y-%m-%d %H:%M:%S";
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["start_time", "end_time", "start_station_id", "end_station_id"])?;
    for t in trips {
        w.write_record([
            t.start_time.format(FMT).to_string(),
            t.end_time.format(FMT).to_string(),
            t.start_station.label().to_string(),
            t.end_station.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{estimate_demand, extract_day_sequences, parse_trips, DayFilter};

    #[test]
    fn daily_volume_matches_config() {
        let cfg = CityConfig::default();
        let m = city_model(&cfg).unwrap();
        let total: f64 = m.active_pairs().map(|(_, _, f)| f.integral(0.0, 24.0)).sum();
        assert!((total - cfg.daily_trips).abs() < 1e-6 * cfg.daily_trips);
    }

    #[test]
    fn hubs_fill_in_the_morning_and_drain_in_the_evening() {
        let cfg = CityConfig::default();
        let m = city_model(&cfg).unwrap();
        let net = |i: usize, a: f64, b: f64| -> f64 {
            (0..cfg.stations)
                .filter(|&j| j != i)
                .map(|j| m.rate(j, i).integral(a, b) - m.rate(i, j).integral(a, b))
                .sum()
        };
        for hub in 0..cfg.hubs {
            assert!(net(hub, 7.0, 10.0) > 0.0);
            assert!(net(hub, 16.0, 19.0) < 0.0);
        }
    }

    #[test]
    fn model_is_reproducible_from_seed() {
        let cfg = CityConfig { stations: 8, hubs: 2, ..CityConfig::default() };
        assert_eq!(city_model(&cfg).unwrap(), city_model(&cfg).unwrap());
        let other = CityConfig { seed: 7, ..cfg.clone() };
        assert_ne!(city_model(&cfg).unwrap(), city_model(&other).unwrap());
    }

    #[test]
    fn may_has_twenty_two_working_days() {
        let days = may_2016();
        assert_eq!(days.len(), 31);
        assert_eq!(days.iter().filter(|d| !is_weekend(**d)).count(), 22);
    }

    #[test]
    fn sampled_trips_survive_the_csv_round_trip() {
        let cfg = CityConfig { stations: 6, hubs: 1, daily_trips: 120.0, ..CityConfig::default() };
        let m = city_model(&cfg).unwrap();
        let trips = sample_trips(&m, &may_2016(), 0.5, 11).unwrap();
        let mut buf = Vec::new();
        write_trips_csv(&mut buf, &trips).unwrap();
        let parsed = parse_trips(buf.as_slice(), None).unwrap();
        assert!(parsed.rejected.is_empty());
        assert_eq!(parsed.trips, trips);

        let est = estimate_demand(&parsed.trips, 6, 24.0, 1.0, DayFilter::default()).unwrap();
        assert_eq!(est.days, 22);
        let seqs = extract_day_sequences(&parsed.trips, DayFilter::default());
        assert_eq!(seqs.len(), 22);
        let working: usize = seqs.iter().map(|s| s.events.len()).sum();
        let expected = 22.0 * cfg.daily_trips;
        assert!((working as f64 - expected).abs() < 5.0 * expected.sqrt());
    }
}
