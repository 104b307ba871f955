use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate pair_id `{0}`")]
    DuplicatePair(String),

    #[error("unknown pair_id `{0}`")]
    UnknownPair(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("emotion scores for `{pair_id}` are invalid: {reason}")]
    Emotion { pair_id: String, reason: String },

    #[error("need at least two classes: {0}")]
    SingleClass(String),

    #[error("rank deficient design: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("perfect separation detected: {0}")]
    Separation(String),

    #[error("did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
