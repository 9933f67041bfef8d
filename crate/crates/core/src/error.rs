//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not start with the expected magic bytes.
    #[error("{context}: not a {expected} file")]
    BadMagic {
        expected: &'static str,
        context: String,
    },

    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u16 },

    #[error("truncated {0}")]
    TruncatedFile(String),

    #[error("shape error at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    /// No allocation in range can satisfy the bit budget.
    #[error("infeasible budget: {budget_bits} bits < {min_bits} bits for the all-ones allocation")]
    InfeasibleBudget { budget_bits: u64, min_bits: u64 },

    #[error("budget unreachable: every layer is at 1 bit ({min_bits} bits) but the budget is {budget_bits} bits")]
    BudgetUnreachable { budget_bits: u64, min_bits: u64 },

    #[error("grid too large: {configs} configurations exceed the cap of {cap}")]
    GridCapExceeded { configs: u128, cap: u128 },

    #[error("random search stalled after {attempts} consecutive rejected draws; tighten the per-layer bit ranges")]
    RejectionStall { attempts: u64 },

    #[error("fingerprint mismatch: stream is {actual:#018x}, delta expects {expected:#018x}")]
    FingerprintMismatch { expected: u64, actual: u64 },

    /// Shared stages of two streams disagree, so they do not come from one
    /// hierarchical quantization.
    #[error("bit-plane mismatch at layer {layer}, stage {stage}")]
    PlaneMismatch { layer: usize, stage: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Coarse classification used by the CLI to pick exit codes.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io(_) => ErrorClass::Io,
            InvalidConfig(_) => ErrorClass::Config,
            InfeasibleBudget { .. } | BudgetUnreachable { .. } | GridCapExceeded { .. }
            | RejectionStall { .. } => ErrorClass::Infeasible,
            NonFiniteLoss { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }
}

/// Exit-code classes for the CLI: config errors, I/O errors, file/format
/// validation, infeasible searches, numeric failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Validation,
    Infeasible,
    Numeric,
}
