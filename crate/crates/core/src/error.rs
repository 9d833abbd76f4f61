use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violates a structural constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// A shift or window leaves the sampled part of the Wiener path.
    #[error("shift-range error: requested window [{lo}, {hi}] outside sampled path [{path_lo}, {path_hi}]")]
    ShiftRange {
        lo: f64,
        hi: f64,
        path_lo: f64,
        path_hi: f64,
    },

    /// A time is not a point of the grid it is used with.
    #[error("alignment error: time {0} is not on the grid")]
    Alignment(f64),

    /// Evolution operators are only defined for `t >= s`.
    #[error("ordering error: expected s <= t (or s < t), got t = {t}, s = {s}")]
    Ordering { t: f64, s: f64 },

    /// A fractional power was requested for an operator that is not negative definite.
    #[error("definiteness error: eigenvalue {0} is not negative")]
    Definiteness(f64),

    /// A non-finite value appeared during a computation.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
