use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("objective tables are defined on different grids")]
    GridMismatch,

    #[error("grid index {index} is not in the empirical {delta}-minimizer set")]
    Membership { index: usize, delta: f64 },

    #[error("invalid sharp-growth certificate: {0}")]
    Certificate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A deterministic inequality failed on a simulated replication.
    #[error("check failed at n={n}, rep={rep} (reproduce with seed {seed}): {detail}")]
    CheckFailed {
        n: usize,
        rep: usize,
        seed: u64,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
