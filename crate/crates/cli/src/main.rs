//! `fleet`: command-line pipeline for fleet sizing.
//!
//! Exit codes: 0 success, 1 input error (including usage errors), 2 budget
//! infeasible or unreachable, 3 internal invariant violation. The worker
//! thread count follows `RAYON_NUM_THREADS`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fleet_core::coupled::{coupled_trajectory, CoupledOptions, DEFAULT_STATE_CAP};
use fleet_core::decoupled::{bound_curve, bound_trajectories, system_failure_upper_bound};
use fleet_core::formats::{fmt_num, read_json, write_csv, write_json, DesignDocument, ModelDocument};
use fleet_core::ingest::{estimate_demand, extract_day_sequences, parse_trips, DayFilter, DaySequence, Days};
use fleet_core::montecarlo::{estimate_failure_curve, uniform_grid, McConfig};
use fleet_core::rebalance::plan_rebalancing;
use fleet_core::replay::{baseline_design, replay_days, sweep, ReplayMode};
use fleet_core::sizing::{size_system, SearchStrategy, SizingRequest};
use fleet_core::synthetic::{city_model, may_2016, sample_trips, write_trips_csv, CityConfig};
use fleet_core::{DemandModel, RebalancingPlan, SystemDesign};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "fleet", version, about = "Fleet sizing and capacity design for vehicle sharing systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a demand model and day sequences from a trip CSV.
    Ingest(IngestArgs),
    /// Build a rebalancing plan from a demand model.
    Plan(PlanArgs),
    /// Size per-station stock and capacity for a failure budget.
    Size(SizeArgs),
    /// Evaluate the decoupled failure bound of a design.
    Bound(BoundArgs),
    /// Estimate the coupled failure probability (exact or Monte Carlo).
    Simulate(SimulateArgs),
    /// Replay recorded days against a design.
    Replay(ReplayArgs),
    /// Baseline-vs-proposed failure-rate curves.
    Sweep(SweepArgs),
    /// Generate a synthetic commuter city and its May 2016 trip log.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Inputs {
    /// Demand model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Rebalancing plan JSON; no relocations when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Horizon in hours; defaults to the model horizon.
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<f64>,
    /// Treat travel as instantaneous.
    #[arg(long)]
    zero_delay: bool,
}

struct Loaded {
    model: DemandModel,
    plan: RebalancingPlan,
    horizon: f64,
    with_delay: bool,
}

impl Inputs {
    fn load(&self) -> anyhow::Result<Loaded> {
        let model = load_model(&self.model)?;
        let plan = match &self.plan {
            Some(p) => {
                let plan = read_json::<ModelDocument>(p)?.plan()?;
                if plan.k() != model.k() || plan.horizon() != model.horizon() {
                    bail!(input_error(format!("plan {} does not match the model", p.display())));
                }
                plan
            }
            None => RebalancingPlan::empty(model.k(), model.horizon()),
        };
        let horizon = self.horizon.unwrap_or(model.horizon());
        if !(horizon > 0.0 && horizon <= model.horizon()) {
            bail!(input_error(format!("--T {horizon} must lie in (0, {}]", model.horizon())));
        }
        Ok(Loaded { model, plan, horizon, with_delay: !self.zero_delay })
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Trip CSV with start_time, end_time, start_station_id, end_station_id.
    #[arg(long)]
    trips: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    bin_hours: f64,
    #[arg(long, value_enum, default_value_t = DaysArg::Working)]
    days: DaysArg,
    /// Keep only this calendar month (1-12).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=12))]
    month: Option<u32>,
    #[arg(long = "T", alias = "horizon", default_value_t = fleet_core::model::DEFAULT_HORIZON_HOURS)]
    horizon: f64,
    /// Output demand model JSON.
    #[arg(long)]
    model_out: PathBuf,
    /// Output day-sequence JSON.
    #[arg(long)]
    days_out: Option<PathBuf>,
    /// Output JSON list mapping labels 1..k to raw station ids.
    #[arg(long)]
    stations_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DaysArg {
    Working,
    All,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    bin_hours: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SizeArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// System failure budget in (0, 1).
    #[arg(long)]
    z: f64,
    /// Joint (v, c) search per station with capacities up to this value.
    #[arg(long)]
    exhaustive: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    design: PathBuf,
    /// Budget to compare against; flags the result as infeasible when exceeded.
    #[arg(long)]
    z: Option<f64>,
    /// CSV trace (t, station, qF) on a uniform grid.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    design: PathBuf,
    /// Exact coupled integration (small instances, instantaneous travel).
    #[arg(long, conflicts_with = "mc")]
    exact: bool,
    /// Monte Carlo estimate (the default).
    #[arg(long)]
    mc: bool,
    #[arg(long, default_value_t = 20000, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Demand model JSON supplying relocation travel times.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    design: PathBuf,
    /// Day-sequence JSON from `ingest`.
    #[arg(long)]
    days: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Overflow)]
    mode: ModeArg,
    /// Per-day CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Overflow,
    Strict,
}

impl From<ModeArg> for ReplayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Overflow => ReplayMode::Overflow,
            ModeArg::Strict => ReplayMode::Strict,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    days: PathBuf,
    /// Plan for the rebalancing curves; built from the model when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    bin_hours: f64,
    /// Baseline per-station capacities.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12,14,16,18,20,24,28,32,40,48,56,64")]
    capacities: Vec<u32>,
    /// Budgets for the proposed designs.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1,0.05,0.01")]
    z_grid: Vec<f64>,
    #[arg(long)]
    zero_delay: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::Overflow)]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    stations: usize,
    #[arg(long, default_value_t = 4)]
    hubs: usize,
    #[arg(long, default_value_t = 800.0)]
    daily_trips: f64,
    #[arg(long, default_value_t = 0.6)]
    commute_share: f64,
    #[arg(long, default_value_t = 0.5)]
    weekend_factor: f64,
    #[arg(long, default_value_t = 2016)]
    seed: u64,
    /// Trip CSV covering May 2016.
    #[arg(long)]
    trips_out: PathBuf,
    /// Ground-truth demand model JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn input_error(msg: String) -> fleet_core::Error {
    fleet_core::Error::InvalidInput(msg)
}

fn load_model(path: &Path) -> anyhow::Result<DemandModel> {
    let doc: ModelDocument = read_json(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(doc.model()?)
}

fn load_design(path: &Path, k: usize) -> anyhow::Result<SystemDesign> {
    let doc: DesignDocument = read_json(path).with_context(|| format!("reading design {}", path.display()))?;
    let design = doc.design()?;
    design.check_stations(k)?;
    Ok(design)
}

fn sink(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let file = File::open(&a.trips).with_context(|| format!("opening {}", a.trips.display()))?;
    let parsed = parse_trips(BufReader::new(file), None)?;
    for r in parsed.rejected.iter().take(10) {
        eprintln!("row {}: {}", r.row, r.reason);
    }
    let filter = DayFilter {
        days: match a.days {
            DaysArg::Working => Days::Working,
            DaysArg::All => Days::All,
        },
        month: a.month,
    };
    let est = estimate_demand(&parsed.trips, parsed.stations.len(), a.horizon, a.bin_hours, filter)?;
    eprintln!(
        "{} trips parsed, {} rows rejected, {} round trips dropped, {} trips over {} days used, {} stations",
        parsed.trips.len(),
        parsed.rejected.len(),
        est.round_trips_dropped,
        est.trips_used,
        est.days,
        parsed.stations.len()
    );
    write_json(&a.model_out, &ModelDocument::from_model(&est.model))?;
    if let Some(p) = &a.days_out {
        write_json(p, &extract_day_sequences(&parsed.trips, filter))?;
    }
    if let Some(p) = &a.stations_out {
        let ids: Vec<&str> =
            (0..parsed.stations.len()).map(|i| parsed.stations.raw_id(fleet_core::StationId::from_index(i))).collect();
        write_json(p, &ids)?;
    }
    Ok(())
}

fn plan(a: PlanArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let plan = plan_rebalancing(&model, a.bin_hours)?;
    eprintln!("{} relocations planned", plan.total_relocations());
    write_json(&a.out, &ModelDocument::from_plan(&plan))?;
    Ok(())
}

fn strategy(exhaustive: Option<u32>) -> SearchStrategy {
    exhaustive.map_or(SearchStrategy::Coordinate, |max_capacity| SearchStrategy::Exhaustive { max_capacity })
}

fn size(a: SizeArgs) -> anyhow::Result<()> {
    let l = a.inputs.load()?;
    let request = SizingRequest::uniform(a.z, l.model.k(), l.horizon)?;
    let result = size_system(&l.model, &l.plan, &request, l.with_delay, strategy(a.exhaustive))?;
    let design = result.design();
    eprintln!("fleet {}, capacity {}, bound {}", design.total_fleet(), design.total_capacity(), fmt_num(result.bound));
    write_json(&a.out, &DesignDocument::from(&result))?;
    Ok(())
}

fn bound(a: BoundArgs) -> anyhow::Result<()> {
    let l = a.inputs.load()?;
    let design = load_design(&a.design, l.model.k())?;
    let b = system_failure_upper_bound::<f64>(&l.model, &l.plan, &design, l.horizon, l.with_delay)?;
    let mut report = json!({
        "T": l.horizon,
        "bound": b.total,
        "stations": b.per_station.iter().enumerate().map(|(i, q)| json!({"id": i + 1, "qf": q})).collect::<Vec<_>>(),
    });
    if let Some(z) = a.z {
        report["z"] = json!(z);
        report["infeasible"] = json!(b.total > z);
    }
    let mut w = sink(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;

    if let Some(path) = &a.trace {
        let grid = uniform_grid(l.horizon, a.samples.max(1));
        let traj = bound_trajectories::<f64>(&l.model, &l.plan, &design, &grid, l.with_delay)?;
        let total = bound_curve(&traj);
        let mut rows = Vec::with_capacity(grid.len() * (traj.len() + 1));
        for (s, &t) in grid.iter().enumerate() {
            for (i, station) in traj.iter().enumerate() {
                rows.push(vec![fmt_num(t), (i + 1).to_string(), fmt_num(station[s].failed)]);
            }
            rows.push(vec![fmt_num(t), "all".into(), fmt_num(total[s])]);
        }
        write_csv(BufWriter::new(File::create(path)?), &["t", "station", "qF"], rows)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let l = a.inputs.load()?;
    let design = load_design(&a.design, l.model.k())?;
    let grid = uniform_grid(l.horizon, a.samples.max(1));
    if a.exact {
        let options = CoupledOptions { state_cap: a.state_cap };
        match coupled_trajectory::<f64>(&l.model, &l.plan, &design, &grid, options) {
            Ok(traj) => {
                let rows = grid.iter().zip(&traj).map(|(&t, p)| vec![fmt_num(t), fmt_num(p.failed)]);
                return Ok(write_csv(sink(a.out.as_deref())?, &["t", "p_f"], rows)?);
            }
            Err(e @ fleet_core::Error::StateSpaceTooLarge { .. }) => {
                eprintln!("{e}; falling back to {} Monte Carlo runs", a.runs);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let config = McConfig { horizon: l.horizon, with_delay: l.with_delay, seed: a.seed };
    let curve = estimate_failure_curve(&l.model, &l.plan, &design, config, a.runs, &grid)?;
    let rows = curve.iter().map(|(t, e)| vec![fmt_num(*t), fmt_num(e.mean), fmt_num(e.stderr), e.n.to_string()]);
    write_csv(sink(a.out.as_deref())?, &["t", "p_hat", "stderr", "n"], rows)?;
    Ok(())
}

fn load_days(path: &Path) -> anyhow::Result<Vec<DaySequence>> {
    let days: Vec<DaySequence> = read_json(path).with_context(|| format!("reading days {}", path.display()))?;
    if days.is_empty() {
        bail!(input_error(format!("{} holds no day sequences", path.display())));
    }
    Ok(days)
}

fn replay(a: ReplayArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let plan = match &a.plan {
        Some(p) => read_json::<ModelDocument>(p)?.plan()?,
        None => RebalancingPlan::empty(model.k(), model.horizon()),
    };
    let design = load_design(&a.design, model.k())?;
    let days = load_days(&a.days)?;
    let outcomes = replay_days(&days, &plan, model.travel_times(), &design, a.mode.into())?;
    let rate = fleet_core::replay::failure_rate(&outcomes)?;
    eprintln!("failure rate {} over {} days", fmt_num(rate), outcomes.len());
    let rows = outcomes.iter().map(|o| {
        vec![
            o.date.to_string(),
            o.availability_failures.to_string(),
            o.capacity_failures.to_string(),
            u8::from(o.day_failed).to_string(),
            o.in_transit.to_string(),
        ]
    });
    write_csv(
        sink(a.out.as_deref())?,
        &["date", "availability_failures", "capacity_failures", "day_failed", "in_transit"],
        rows,
    )?;
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let days = load_days(&a.days)?;
    let k = model.k();
    let horizon = model.horizon();
    let rebalanced = match &a.plan {
        Some(p) => read_json::<ModelDocument>(p)?.plan()?,
        None => plan_rebalancing(&model, a.bin_hours)?,
    };
    let mut rows = Vec::new();
    for (tag, plan) in [("no-rebalancing", RebalancingPlan::empty(k, horizon)), ("rebalancing", rebalanced)] {
        let mut designs: Vec<(String, SystemDesign)> =
            a.capacities.iter().map(|&c| (format!("baseline/{tag}/C={c}"), baseline_design(k, c))).collect();
        for &z in &a.z_grid {
            let request = SizingRequest::uniform(z, k, horizon)?;
            let result = size_system(&model, &plan, &request, !a.zero_delay, SearchStrategy::Coordinate)?;
            designs.push((format!("proposed/{tag}/z={z}"), result.design()));
        }
        rows.extend(sweep(&designs, &days, &plan, model.travel_times(), a.mode.into())?);
    }
    let cells = rows
        .into_iter()
        .map(|r| vec![r.label, r.total_fleet.to_string(), r.total_capacity.to_string(), fmt_num(r.failure_rate)]);
    write_csv(sink(a.out.as_deref())?, &["label", "total_fleet", "total_capacity", "failure_rate"], cells)?;
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = CityConfig {
        stations: a.stations,
        hubs: a.hubs,
        daily_trips: a.daily_trips,
        commute_share: a.commute_share,
        weekend_factor: a.weekend_factor,
        seed: a.seed,
        ..CityConfig::default()
    };
    let model = city_model(&cfg)?;
    let trips = sample_trips(&model, &may_2016(), cfg.weekend_factor, a.seed)?;
    write_trips_csv(BufWriter::new(File::create(&a.trips_out)?), &trips)?;
    if let Some(p) = &a.model_out {
        write_json(p, &ModelDocument::from_model(&model))?;
    }
    eprintln!("{} trips written", trips.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fleet_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::BudgetUnreachable { .. } | E::Infeasible { .. }) => 2,
        Some(E::Invariant(_)) => 3,
        _ => 1,
    }
}

fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::from(e.use_stderr());
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Plan(a) => plan(a),
        Command::Size(a) => size(a),
        Command::Bound(a) => bound(a),
        Command::Simulate(a) => simulate(a),
        Command::Replay(a) => replay(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
