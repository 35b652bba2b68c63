use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward already ran on this tape")]
    AlreadyBackpropagated,
    #[error("backward requires a scalar loss, got {len} elements")]
    NonScalarLoss { len: usize },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("calibration stats missing for {0}")]
    CalibrationStatsMissing(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("format mismatch at input {index}: expected {expected}, got {got}")]
    FormatMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("value at node {node} does not fit its declared width {width}")]
    WidthOverflow { node: usize, width: u32 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
