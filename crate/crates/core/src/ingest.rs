//! Trip-record ingestion: CSV parsing, demand estimation and per-day rental
//! sequences for replay.
//!
//! Required columns are `start_time`, `end_time`, `start_station_id` and
//! `end_station_id`; the legacy Hubway headers (`starttime`, `stoptime`,
//! `start station id`, `end station id`) are accepted as aliases and extra
//! columns are ignored. Timestamps are local wall-clock times.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DemandModel, PiecewiseConstantIntensity, StationId};

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
];

const COLUMNS: [(&str, &[&str]); 4] = [
    ("start_time", &["start_time", "starttime"]),
    ("end_time", &["end_time", "stoptime", "endtime"]),
    ("start_station_id", &["start_station_id", "start station id"]),
    ("end_station_id", &["end_station_id", "end station id"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripRecord {
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub start_station: StationId,
    pub end_station: StationId,
}

impl TripRecord {
    pub fn duration_hours(&self) -> f64 {
        (self.end_time - self.start_time).num_milliseconds() as f64 / 3.6e6
    }

    pub fn is_round_trip(&self) -> bool {
        self.start_station == self.end_station
    }

    pub fn date(&self) -> NaiveDate {
        self.start_time.date()
    }

    /// Start time in hours after local midnight.
    pub fn start_hour(&self) -> f64 {
        hours_since_midnight(self.start_time)
    }
}

fn hours_since_midnight(t: NaiveDateTime) -> f64 {
    let secs = t.num_seconds_from_midnight() as f64 + f64::from(t.nanosecond()) * 1e-9;
    secs / 3600.0
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Maps raw station ids from the data to dense labels `1..=k`.
///
/// Ids are ordered numerically when every id is an integer and
/// lexicographically otherwise, so the mapping does not depend on row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationIndex {
    raw: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl StationIndex {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut raw: Vec<String> = ids.into_iter().map(|s| s.as_ref().trim().to_string()).collect();
        raw.sort();
        raw.dedup();
        if raw.iter().all(|s| s.parse::<i64>().is_ok()) {
            raw.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
        }
        let lookup = raw.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { raw, lookup }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn get(&self, raw: &str) -> Option<StationId> {
        self.lookup.get(raw.trim()).map(|&i| StationId::from_index(i))
    }

    pub fn raw_id(&self, station: StationId) -> &str {
        &self.raw[station.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedTrips {
    pub trips: Vec<TripRecord>,
    pub stations: StationIndex,
    pub rejected: Vec<RejectedRow>,
}

struct RawTrip {
    start: NaiveDateTime,
    end: NaiveDateTime,
    o: String,
    d: String,
}

/// Reads trip records from CSV.
///
/// With `stations` given, rows naming other stations are rejected; without
/// it the station set is taken from the valid rows. Malformed rows are
/// collected in [`ParsedTrips::rejected`] rather than failing the parse.
pub fn parse_trips<R: Read>(input: R, stations: Option<&StationIndex>) -> Result<ParsedTrips> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 4];
    for (slot, (name, aliases)) in cols.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| aliases.iter().any(|a| h.eq_ignore_ascii_case(a)))
            .ok_or_else(|| Error::TripFile(format!("missing required column {name}")))?;
    }

    let mut raw = Vec::new();
    let mut rejected = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        rows += 1;
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRow { row, reason: e.to_string() });
                continue;
            }
        };
        let field = |c: usize| record.get(c).unwrap_or("");
        let (Some(start), Some(end)) = (parse_timestamp(field(cols[0])), parse_timestamp(field(cols[1]))) else {
            rejected.push(RejectedRow { row, reason: "unparseable timestamp".into() });
            continue;
        };
        if end < start {
            rejected.push(RejectedRow { row, reason: "end_time before start_time".into() });
            continue;
        }
        let (o, d) = (field(cols[2]), field(cols[3]));
        if o.is_empty() || d.is_empty() {
            rejected.push(RejectedRow { row, reason: "missing station id".into() });
            continue;
        }
        if let Some(index) = stations {
            if let Some(unknown) = [o, d].into_iter().find(|s| index.get(s).is_none()) {
                rejected.push(RejectedRow { row, reason: format!("unknown station id {unknown}") });
                continue;
            }
        }
        raw.push(RawTrip { start, end, o: o.to_string(), d: d.to_string() });
    }
    if rows == 0 {
        return Err(Error::TripFile("no data rows".into()));
    }

    let stations = match stations {
        Some(s) => s.clone(),
        None => StationIndex::from_ids(raw.iter().flat_map(|t| [t.o.as_str(), t.d.as_str()])),
    };
    let trips = raw
        .into_iter()
        .map(|t| TripRecord {
            start_time: t.start,
            end_time: t.end,
            start_station: stations.get(&t.o).expect("indexed"),
            end_station: stations.get(&t.d).expect("indexed"),
        })
        .collect();
    Ok(ParsedTrips { trips, stations, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Days {
    /// Monday to Friday.
    #[default]
    Working,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DayFilter {
    pub days: Days,
    /// Calendar month 1..=12.
    pub month: Option<u32>,
}

impl DayFilter {
    pub fn accepts(&self, date: NaiveDate) -> bool {
        let weekday_ok = match self.days {
            Days::All => true,
            Days::Working => !matches!(date.weekday(), Weekday::Sat | Weekday::Sun),
        };
        weekday_ok && self.month.is_none_or(|m| date.month() == m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandEstimate {
    pub model: DemandModel,
    /// Distinct calendar days contributing trips.
    pub days: usize,
    pub trips_used: usize,
    pub round_trips_dropped: usize,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

/// Averages the filtered days into one typical-day demand model.
///
/// The rate of pair `(o, d)` in bin `b` is the number of trips starting in
/// that bin divided by `days * width_b`. The travel time is the median
/// observed duration for the pair, or the median over all trips for pairs
/// never observed.
pub fn estimate_demand(
    trips: &[TripRecord],
    k: usize,
    horizon: f64,
    bin_hours: f64,
    filter: DayFilter,
) -> Result<DemandEstimate> {
    let edges = crate::rebalance::bin_edges(horizon, bin_hours)?;
    let bins = edges.len() - 1;
    let kept: Vec<&TripRecord> = trips.iter().filter(|t| filter.accepts(t.date())).collect();
    let days: BTreeSet<NaiveDate> = kept.iter().map(|t| t.date()).collect();
    if days.is_empty() {
        return Err(Error::InvalidInput("no trips remain after the day filter".into()));
    }
    let n_days = days.len() as f64;

    let mut counts: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    let mut durations: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut round_trips = 0;
    let mut used = 0;
    for t in &kept {
        let (o, d) = (t.start_station.index(), t.end_station.index());
        if o >= k || d >= k {
            return Err(Error::InvalidStation { station: o.max(d) + 1, k });
        }
        if o == d {
            round_trips += 1;
            continue;
        }
        let h = t.start_hour();
        if h >= horizon {
            continue;
        }
        let b = edges.partition_point(|&e| e <= h) - 1;
        counts.entry((o, d)).or_insert_with(|| vec![0; bins])[b] += 1;
        durations.entry((o, d)).or_default().push(t.duration_hours());
        used += 1;
    }

    let global = median(durations.values().flatten().copied().collect()).unwrap_or(0.0);
    let mut model = DemandModel::new(k, horizon)?;
    for o in 0..k {
        for d in (0..k).filter(|&d| d != o) {
            let (so, sd) = (StationId::from_index(o), StationId::from_index(d));
            let eta = durations.get(&(o, d)).and_then(|xs| median(xs.clone())).unwrap_or(global);
            model.set_travel_time(so, sd, eta)?;
            if let Some(c) = counts.get(&(o, d)) {
                let values =
                    c.iter().zip(edges.windows(2)).map(|(&n, w)| n as f64 / (n_days * (w[1] - w[0]))).collect();
                let f = PiecewiseConstantIntensity::new(edges[..bins].to_vec(), values, horizon)?.simplified();
                model.set_rate(so, sd, f)?;
            }
        }
    }
    Ok(DemandEstimate { model, days: days.len(), trips_used: used, round_trips_dropped: round_trips })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RentalEvent {
    /// Hours after local midnight.
    pub t: f64,
    pub o: StationId,
    pub d: StationId,
    /// Observed trip duration in hours.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySequence {
    pub date: NaiveDate,
    pub events: Vec<RentalEvent>,
}

/// One sequence per calendar day passing `filter`, ordered by date, with
/// events stably sorted by start time. Round trips are left out.
pub fn extract_day_sequences(trips: &[TripRecord], filter: DayFilter) -> Vec<DaySequence> {
    let mut by_day: BTreeMap<NaiveDate, Vec<RentalEvent>> = BTreeMap::new();
    for t in trips.iter().filter(|t| filter.accepts(t.date())) {
        let events = by_day.entry(t.date()).or_default();
        if !t.is_round_trip() {
            events.push(RentalEvent {
                t: t.start_hour(),
                o: t.start_station,
                d: t.end_station,
                eta: t.duration_hours(),
            });
        }
    }
    by_day
        .into_iter()
        .map(|(date, mut events)| {
            events.sort_by(|a, b| a.t.total_cmp(&b.t));
            DaySequence { date, events }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "start_time,end_time,start_station_id,end_station_id\n";

    fn parse(body: &str) -> ParsedTrips {
        parse_trips(format!("{HEADER}{body}").as_bytes(), None).unwrap()
    }

    #[test]
    fn parses_a_row() {
        let p = parse("2016-05-02T08:15:00,2016-05-02T08:30:00,22,36\n");
        assert_eq!(p.trips.len(), 1);
        let t = &p.trips[0];
        assert_eq!(p.stations.raw_id(t.start_station), "22");
        assert_eq!(p.stations.raw_id(t.end_station), "36");
        assert!((t.duration_hours() - 0.25).abs() < 1e-12);
        assert!((t.start_hour() - 8.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows_without_failing() {
        let p = parse(
            "2016-05-02T08:15:00,2016-05-02T08:00:00,22,36\n\
             garbage,2016-05-02T08:00:00,22,36\n\
             2016-05-02 09:00:00,2016-05-02 09:10:00,36,22\n",
        );
        assert_eq!(p.trips.len(), 1);
        assert_eq!(p.rejected.len(), 2);
        assert_eq!(p.rejected[0].row, 1);
        assert!(p.rejected[0].reason.contains("before"));
    }

    #[test]
    fn unknown_station_is_rejected() {
        let index = StationIndex::from_ids(["22", "36"]);
        let body = format!("{HEADER}2016-05-02T08:15:00,2016-05-02T08:30:00,22,99\n");
        let p = parse_trips(body.as_bytes(), Some(&index)).unwrap();
        assert!(p.trips.is_empty());
        assert!(p.rejected[0].reason.contains("99"));
    }

    #[test]
    fn missing_column_and_empty_file_are_errors() {
        assert!(matches!(parse_trips("a,b\n1,2\n".as_bytes(), None), Err(Error::TripFile(_))));
        assert!(matches!(parse_trips(HEADER.as_bytes(), None), Err(Error::TripFile(_))));
    }

    #[test]
    fn legacy_headers_and_extra_columns() {
        let body = "tripduration,starttime,stoptime,start station id,end station id,bikeid\n\
                    900,2016-05-02 08:15:00,2016-05-02 08:30:00,3,5,77\n";
        let p = parse_trips(body.as_bytes(), None).unwrap();
        assert_eq!(p.trips.len(), 1);
    }

    #[test]
    fn station_index_orders_numerically() {
        let idx = StationIndex::from_ids(["10", "9", "100", "9"]);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.get("9").unwrap().label(), 1);
        assert_eq!(idx.get("100").unwrap().label(), 3);
    }

    #[test]
    fn estimation_counts_per_exposure() {
        let p = parse(
            "2016-05-02T08:10:00,2016-05-02T08:30:00,1,2\n\
             2016-05-02T08:50:00,2016-05-02T09:30:00,1,2\n\
             2016-05-02T10:00:00,2016-05-02T10:10:00,2,3\n",
        );
        let est = estimate_demand(&p.trips, 3, 24.0, 1.0, DayFilter::default()).unwrap();
        let m = &est.model;
        assert_eq!(m.rate(0, 1).eval(8.5).unwrap(), 2.0);
        assert_eq!(m.rate(0, 1).eval(9.5).unwrap(), 0.0);
        assert!((m.travel_time(0, 1) - 0.5).abs() < 1e-12);
        assert!(m.rate(2, 0).is_zero());
        assert!((m.travel_time(2, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn forty_four_trips_over_twenty_two_days() {
        let mut body = String::new();
        let mut day = NaiveDate::from_ymd_opt(2016, 5, 1).unwrap();
        let mut used = 0;
        while used < 22 {
            if DayFilter::default().accepts(day) {
                for m in [5, 40] {
                    body.push_str(&format!("{day}T08:{m:02}:00,{day}T09:{m:02}:00,1,2\n"));
                }
                used += 1;
            }
            day = day.succ_opt().unwrap();
        }
        let p = parse(&body);
        let est = estimate_demand(&p.trips, 2, 24.0, 1.0, DayFilter::default()).unwrap();
        assert_eq!(est.days, 22);
        assert_eq!(est.model.rate(0, 1).eval(8.0).unwrap(), 2.0);
        assert_eq!(extract_day_sequences(&p.trips, DayFilter::default()).len(), 22);
    }

    #[test]
    fn weekends_filtered_and_round_trips_dropped() {
        // 2016-05-07 is a Saturday.
        let p = parse(
            "2016-05-07T08:00:00,2016-05-07T08:30:00,1,2\n\
             2016-05-06T08:00:00,2016-05-06T08:30:00,1,1\n\
             2016-05-06T07:00:00,2016-05-06T07:30:00,2,1\n",
        );
        let est = estimate_demand(&p.trips, 2, 24.0, 1.0, DayFilter::default()).unwrap();
        assert_eq!(est.days, 1);
        assert_eq!(est.round_trips_dropped, 1);
        assert!(est.model.rate(0, 1).is_zero());
        let seqs = extract_day_sequences(&p.trips, DayFilter::default());
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].events.len(), 1);
        let all = extract_day_sequences(&p.trips, DayFilter { days: Days::All, month: None });
        assert_eq!(all.len(), 2);
        let june = DayFilter { days: Days::All, month: Some(6) };
        assert!(matches!(estimate_demand(&p.trips, 2, 24.0, 1.0, june), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn day_sequences_are_stably_sorted() {
        let p = parse(
            "2016-05-02T09:00:00,2016-05-02T09:30:00,1,2\n\
             2016-05-02T08:00:00,2016-05-02T08:30:00,2,1\n\
             2016-05-02T08:00:00,2016-05-02T08:10:00,1,2\n",
        );
        let seq = &extract_day_sequences(&p.trips, DayFilter::default())[0];
        let order: Vec<(usize, f64)> = seq.events.iter().map(|e| (e.o.label(), e.t)).collect();
        assert_eq!(order, vec![(2, 8.0), (1, 8.0), (1, 9.0)]);
    }

    #[test]
    fn exposure_identity_and_row_order_invariance() {
        let mut rows = Vec::new();
        for (i, day) in [2, 3, 4, 5, 6].iter().enumerate() {
            for h in 0..24 {
                if (h * 7 + i) % 3 == 0 {
                    let (o, d) = (1 + (h % 3), 1 + ((h + 1 + i) % 3));
                    rows.push(format!("2016-05-{day:02}T{h:02}:17:00,2016-05-{day:02}T{h:02}:49:00,{o},{d}\n"));
                }
            }
        }
        let forward = parse(&rows.concat());
        rows.reverse();
        let backward = parse(&rows.concat());
        let a = estimate_demand(&forward.trips, 3, 24.0, 2.0, DayFilter::default()).unwrap();
        let b = estimate_demand(&backward.trips, 3, 24.0, 2.0, DayFilter::default()).unwrap();
        assert_eq!(a.model, b.model);

        for (o, d, f) in a.model.active_pairs() {
            let count =
                forward.trips.iter().filter(|t| t.start_station.index() == o && t.end_station.index() == d).count();
            let total = f.integral(0.0, 24.0) * a.days as f64;
            assert!((total - count as f64).abs() < 1e-9, "pair ({o},{d}): {total} vs {count}");
        }
    }
}
