use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("malformed knots: {0}")]
    MalformedKnots(String),
    #[error("value {value} not attained by the variance profile on [0, {horizon}]")]
    NotAttained { value: f64, horizon: f64 },
    #[error("speed function has infinite end slope A'(1); a finite value is required")]
    InfiniteEndSlope,
    #[error("invalid offspring distribution: {0}")]
    InvalidOffspring(String),
    #[error("population overflow: more than {cap} leaves")]
    PopulationOverflow { cap: u64 },
    #[error("tree has a single leaf; no pair to sample")]
    DegenerateTree,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
