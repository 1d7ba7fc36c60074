use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),

    #[error("invalid session window `{0}`, expected HH:MM-HH:MM")]
    InvalidSession(String),

    #[error("trade of {traded} shares exceeds resting quantity {resting} of order {order_ref}")]
    Overfill {
        order_ref: u64,
        traded: u64,
        resting: u64,
    },

    #[error("message for security {got} routed to book of security {expected}")]
    WrongSecurity { expected: u32, got: u32 },

    #[error("{0}")]
    InvalidInput(String),

    #[error("series is constant, autocorrelation undefined")]
    ConstantSeries,

    #[error("empty tail: no observations at or above x_min")]
    EmptyTail,

    #[error("day {day} has zero total volume")]
    ZeroVolumeDay { day: usize },

    #[error("ground-truth trade sign missing")]
    MissingGroundTruth,

    #[error("degenerate calibration: {0}")]
    Degenerate(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
