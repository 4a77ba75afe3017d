use thiserror::Error;

/// Errors raised by the estimation, completion, repair and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid series key `{0}`")]
    InvalidSeriesKey(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("missing observable `{0}`")]
    MissingObservable(String),

    #[error("zero variance in differenced series: {0}")]
    ZeroVariance(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("degenerate normalizer: both loadings are zero")]
    DegenerateNormalizer,

    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("diagonal blocks must be positive semidefinite")]
    DiagonalBlocksNotPsd,

    #[error("cannot complete entry ({row}, {col}): requires observed stock series")]
    NotCompletable { row: String, col: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("too many failed trials: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
