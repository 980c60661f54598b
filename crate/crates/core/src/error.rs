use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("median not reached")]
    MedianNotReached,
    #[error("no events observed")]
    NoEvents,
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("no cases at horizon {0}")]
    NoCases(f64),
    #[error("no controls at horizon {0}")]
    NoControls(f64),
    #[error("singular design (condition estimate {condition:.3e}); offending columns: {columns:?}")]
    SingularDesign { columns: Vec<String>, condition: f64 },
    #[error("column `{0}` is constant over the included rows")]
    ConstantColumn(String),
    #[error("reference level `{level}` absent from data for `{term}`")]
    ReferenceAbsent { term: String, level: String },
    #[error("fits were computed on different row sets")]
    RowSetMismatch,
    #[error("zero variance in `{0}`")]
    ZeroVariance(String),
    #[error("all differences are zero")]
    AllZero,
    #[error("zero-norm vector at subject {0}")]
    ZeroNorm(usize),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("unknown name `{0}`")]
    UnknownName(String),
}

pub type Result<T> = std::result::Result<T, Error>;
