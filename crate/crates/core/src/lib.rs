//! Fleet sizing and station capacity design for station-based vehicle
//! sharing systems.
//!
//! Given piecewise-constant origin-destination demand and an open-loop
//! rebalancing plan, the crate computes per-station initial stock and
//! parking capacity that keep the system failure-free over a horizon with a
//! chosen confidence, and checks those designs against exact and Monte Carlo
//! evaluation of the joint stock process and against replayed trip days.
//!
//! The probability kernels ([`decoupled`], [`coupled`], [`transient`]) are
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! common double-precision instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupled;
pub mod decoupled;
pub mod error;
pub mod flow;
pub mod formats;
pub mod ingest;
pub mod model;
pub mod montecarlo;
pub mod rebalance;
pub mod replay;
pub mod scalar;
pub mod sizing;
pub mod synthetic;
pub mod transient;

pub use error::{Error, Result};
pub use model::{
    aggregate_station_flows, merged_event_timeline, DemandModel, EventKind, PiecewiseConstantIntensity,
    RebalancingPlan, StationFlowProfile, StationId, SystemDesign, TimelineEvent,
};
pub use scalar::Scalar;

pub type StationDistribution = decoupled::StationDistribution<f64>;
pub type StationDistributionF32 = decoupled::StationDistribution<f32>;
pub type CoupledDistribution = coupled::CoupledDistribution<f64>;
pub type CoupledDistributionF32 = coupled::CoupledDistribution<f32>;
pub type DecoupledBound = decoupled::DecoupledBound<f64>;
