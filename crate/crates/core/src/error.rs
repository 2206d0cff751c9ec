use thiserror::Error;

/// Errors raised by the order-book primitives and their file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LobError {
    #[error("invalid order type code {0} (expected 1..=12)")]
    InvalidCode(u32),
    #[error("price {price} is not a multiple of tick {tick}")]
    GridViolation { price: f64, tick: f64 },
    #[error("event type {code} with jump {jump} would push the spread of {spread} ticks below one tick")]
    SpreadViolation { code: u8, jump: u32, spread: i64 },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("{what} is not sorted by time at index {index}")]
    UnsortedInput { what: &'static str, index: usize },
    #[error("book path is empty")]
    EmptyPath,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("marks for type {code} requested at a spread of {spread} ticks, where the type is gated off")]
    GateViolation { code: u8, spread: i64 },
    #[error(transparent)]
    Lob(#[from] LobError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("no observations for order type {code}")]
    NoObservations { code: u8 },
    #[error("non-positive volume {0} in lognormal fit")]
    NonPositiveVolume(f64),
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("type {code} has {count} events but the spread never exceeded one tick")]
    ZeroActiveTime { code: u8, count: u64 },
    #[error("invalid estimation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Lob(#[from] LobError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("slice has {got} cells, grid expects {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("value function diverged at step {step} (|phi| = {value} exceeds bound {bound})")]
    Divergence { step: usize, value: f64, bound: f64 },
    #[error("value grid format error: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("optimal-control strategy requires a policy table")]
    PolicyMissing,
    #[error("need at least {needed} sessions, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid backtest configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Lob(#[from] LobError),
}

/// Errors reading or writing the on-disk formats.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}
