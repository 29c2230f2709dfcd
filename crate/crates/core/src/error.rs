use std::path::PathBuf;

/// Errors raised anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("zero total sample count")]
    ZeroSamples,

    #[error("AUROC undefined: {0}")]
    AurocUndefined(&'static str),

    #[error("plaintext overflow at element {index}: |value| * scale exceeds the headroom bound")]
    PlaintextOverflow { index: usize },

    #[error("key generation failed after {attempts} attempts")]
    KeyGeneration { attempts: usize },

    #[error("decryption failed: {0}")]
    Decryption(String),

    #[error("too many participants: {count} exceeds the configured maximum {max}")]
    TooManyParticipants { count: usize, max: usize },

    #[error("csv error in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("all edges failed in round {round}")]
    AllEdgesFailed { round: usize },

    #[error("edge {edge} does not exist")]
    UnknownEdge { edge: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
