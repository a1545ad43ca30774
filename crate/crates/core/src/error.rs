use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} is out of range: expected {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("speed ratio f = {0} is infeasible: nested timing needs f < 1")]
    InfeasibleSpeedRatio(f64),

    #[error("d2 = {d2} km is outside the feasible window [0, {bound}] km")]
    InfeasibleD2 { d2: f64, bound: f64 },

    #[error("secret-key capacity is unbounded at eta = 1")]
    InfiniteCapacity,

    #[error("no closed-form scaling polynomial for nesting depth {0} (supported: 1..=5)")]
    UnsupportedDepth(usize),

    #[error("probability {0} exceeds 1; chi is too large for the small-chi formula")]
    ProbabilityOverflow(f64),

    #[error("success probability is zero; the mean wait is infinite")]
    InfiniteWait,

    #[error("probability {0:e} underflowed")]
    ProbabilityUnderflow(f64),

    #[error("Fock cutoff {cutoff} leaves a truncation tail of {tail:e} (limit {limit:e})")]
    Truncation { cutoff: usize, tail: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("no feasible point: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }
}
