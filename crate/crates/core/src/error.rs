use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged at step {step}: {reason}")]
    IntegrationDiverged { step: usize, reason: String },

    #[error("coarse-graining factor must be >= 1, got {0}")]
    BadFactor(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("gradient graph contains a cycle at node {0}")]
    GraphCycle(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: validation loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },

    #[error("window length {got} does not match encoder window length {expected}")]
    WindowLengthMismatch { expected: usize, got: usize },

    #[error("series of length {len} is too short for a window of {window}")]
    TooShort { len: usize, window: usize },

    #[error("trajectories differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("ground-truth energy is zero at step {0}")]
    ZeroEnergy(usize),

    #[error("QR factorization produced a non-positive diagonal entry ({value}) at column {column}")]
    DegenerateR { column: usize, value: f64 },

    #[error("rejection sampling exhausted after {tries} tries for energy {energy}")]
    RejectionExhausted { tries: usize, energy: f64 },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { expected: u32, found: u32 },

    #[error("corrupt record: {0}")]
    CorruptRecord(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
