use thiserror::Error;

/// Errors produced by the cellgrid pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("slot alignment error: {0}")]
    Alignment(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("history underflow: {0}")]
    HistoryUnderflow(String),
    #[error("degenerate lag spec: {0}")]
    DegenerateSpec(String),
    #[error("batch size error: {0}")]
    BatchSize(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
