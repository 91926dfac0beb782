use thiserror::Error;

pub type Result<T, E = BftError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BftError {
    #[error("shape mismatch: {op} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid butterfly spec: {0}")]
    InvalidSpec(String),

    #[error("cannot factor {n} channels with radices up to {k}: {reason}")]
    Unfactorable { n: usize, k: usize, reason: String },

    #[error("{op} requires a power-of-two length, got {len}")]
    NotPowerOfTwo { op: &'static str, len: usize },

    #[error("weight count mismatch: expected {expected}, got {actual}")]
    WeightCount { expected: usize, actual: usize },

    #[error("layer count mismatch: config has {config}, spec has {spec}")]
    LayerCount { config: usize, spec: usize },

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("weight file: {0}")]
    Format(String),

    #[error("training diverged: {fusion} loss became non-finite at epoch {epoch}")]
    Diverged { fusion: String, epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BftError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        BftError::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
