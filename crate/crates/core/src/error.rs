use std::path::PathBuf;

/// Errors produced anywhere in the planning pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("unknown vehicle preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid parameter override: {0}")]
    InvalidOverride(String),
    #[error("simulator state became non-finite")]
    NonFiniteState,
    #[error("time {t} outside trajectory domain [0, {end}]")]
    OutOfDomain { t: f64, end: f64 },
    #[error("desired acceleration cancels gravity; thrust direction undefined")]
    FlatnessSingularity,
    #[error("segment {0} has coincident endpoints")]
    DegenerateSegment(usize),
    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficiency { rank: usize, rows: usize },
    #[error("KKT system is singular")]
    SingularKkt,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("unsupported model format version {0}")]
    FormatVersionMismatch(u32),
    #[error("model file is corrupted: {0}")]
    ShapeCorruption(String),
    #[error("planning objective became non-finite")]
    NonFiniteObjective,
    #[error("waypoint sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
