//! One error type for the whole crate. Variants are named after the failure
//! class rather than the module that raised them, since most of them can
//! surface from several layers (e.g. a dangling object reference can come out
//! of graph edits, trace replay, or rule application).

use crate::ontology::ObjectRef;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("property {prop} of {object} is locked")]
    LockViolation { object: ObjectRef, prop: String },

    #[error("type error: {0}")]
    TypeError(String),

    #[error("dangling reference: {0}")]
    DanglingRef(ObjectRef),

    #[error("empty document")]
    EmptyDocument,

    #[error("bounds error: {0}")]
    BoundsError(String),

    #[error("order error: {0}")]
    OrderError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("state error: {0}")]
    StateError(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("index error: {0}")]
    IndexError(String),

    #[error("tape error: {0}")]
    TapeError(String),

    #[error("numeric error: {0}")]
    NumericError(String),

    #[error("closure error: {0}")]
    ClosureError(String),

    #[error("gold derivation error: {0}")]
    GoldDerivationError(String),

    #[error("supervision error: {0}")]
    SupervisionError(String),

    #[error("mode error: {0}")]
    ModeError(String),

    #[error("eval error: {0}")]
    EvalError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
