use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("duplicate ward id `{0}`")]
    DuplicateWard(String),
    #[error("unknown ward id `{0}`")]
    UnknownWard(String),
    #[error("ward `{0}` compared with itself")]
    SelfComparison(String),
    #[error("index {index} out of range for {len} wards")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix factorisation failed: {0}")]
    Factorisation(String),
    #[error("degenerate samples: {0}")]
    Degenerate(String),
    #[error("Polya-Gamma sampler rejected {0} consecutive proposals")]
    PgIterationCap(usize),
    #[error("malformed geometry: {0}")]
    Geometry(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
