use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mixing parameter lambda = {0} is outside [0, 1]")]
    LambdaRange(f64),

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityRange(f64),

    #[error("detector output index {0} is not one of 0, 1, 2")]
    OutputIndex(usize),

    #[error("satellite offset {0} is not +1 or -1")]
    SatelliteOffset(i64),

    #[error("dimension d = {0} is unsupported here (need {1})")]
    Dimension(u32, &'static str),

    #[error("sigma = {0} must be positive")]
    SigmaRange(f64),

    #[error("invalid coupler ratios {0:?}: {1}")]
    CouplerRatios([f64; 3], &'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time-tag stream is not time-sorted at record {0}")]
    UnsortedStream(usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("fringe fit failed: {0}")]
    Fit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shared domain check for the Werner mixing parameter.
pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::LambdaRange(lambda))
    }
}

/// Shared domain check for detector output indices.
pub(crate) fn check_output_index(idx: usize) -> Result<()> {
    if idx < 3 {
        Ok(())
    } else {
        Err(Error::OutputIndex(idx))
    }
}
