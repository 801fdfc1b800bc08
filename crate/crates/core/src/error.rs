use thiserror::Error;

use crate::trajectory::EmissionRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("waiting time exceeds cap of {cap}/A3: state is numerically dark")]
    EffectivelyDark { cap: f64 },

    #[error("emission sampled from a non-emitting state (both reset channels vanish)")]
    NonEmittingState,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("positivity violated: minimum eigenvalue {min_eigenvalue:e} at t = {time}")]
    PositivityViolation { time: f64, min_eigenvalue: f64 },

    #[error("steady state is not unique ({near_zero} near-zero singular values); restrict to a sector")]
    DegenerateNullSpace { near_zero: usize },

    #[error("corrupted emission record: {0}")]
    CorruptedRecord(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fluorescence class {0} is absent from the period sequence")]
    AbsentClass(u8),

    #[error("record mismatch: {0}")]
    RecordMismatch(String),

    #[error(
        "calibration target T0 = {target} unreachable in omega2 bracket \
         [{lo:e}, {hi:e}] (measured T0 = {t0_lo}, {t0_hi})"
    )]
    CalibrationUnreachable {
        target: f64,
        lo: f64,
        hi: f64,
        t0_lo: f64,
        t0_hi: f64,
    },

    #[error("trajectory aborted after {} emissions: {source}", .record.events.len())]
    TrajectoryAborted {
        record: Box<EmissionRecord>,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
