use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("unsupported sample rate {0} Hz (need an integer multiple of 8000)")]
    UnsupportedRate(u32),
    #[error("degenerate source: {0}")]
    DegenerateSource(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value in layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },
    #[error("math domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, Error>;
