use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("station {station} out of range 1..={k}")]
    InvalidStation { station: usize, k: usize },

    #[error("time {t} outside horizon [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    #[error("intensity horizons disagree: {0} vs {1}")]
    HorizonMismatch(f64, f64),

    #[error("invalid design at station {station}: initial stock {v} exceeds capacity {c}")]
    StockExceedsCapacity { station: usize, v: u32, c: u32 },

    #[error("breakpoint at {t} lies strictly inside the smooth piece [{t0}, {t1}]")]
    InteriorBreakpoint { t: f64, t0: f64, t1: f64 },

    #[error("coupled state space has {states} states, above the cap of {cap}; use Monte Carlo")]
    StateSpaceTooLarge { states: u128, cap: usize },

    #[error("budget {budget} unreachable at station {station} within search cap {cap}")]
    BudgetUnreachable { station: usize, budget: f64, cap: u64 },

    #[error("design infeasible: bound {bound} exceeds budget {z}")]
    Infeasible { bound: f64, z: f64 },

    #[error("imbalance sums to {0} in bin {1}; transportation problem infeasible")]
    UnbalancedSupply(f64, usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed trip file: {0}")]
    TripFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
