use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group order {0}: rotation order must be at least 1")]
    InvalidOrder(usize),

    #[error("cannot parse group spec {0:?} (expected e.g. p4, p8m)")]
    BadGroupSpec(String),

    #[error("cannot parse group element {label:?} for group {group}")]
    BadElement { label: String, group: String },

    #[error("monomial u^{a} v^{b} exceeds the degree-4 basis")]
    BasisOverflow { a: usize, b: usize },

    #[error("no stencil for derivative ({a}, {b})")]
    NoStencil { a: usize, b: usize },

    #[error("grid {rows}x{cols} is smaller than the {size}x{size} mask")]
    GridTooSmall { rows: usize, cols: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular basis matrix during initialization")]
    SingularBasis,

    #[error("element {0} is not a symmetry of the square grid")]
    NotGridSymmetry(String),

    #[error("image must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("need at least {needed} resolutions, got {got}")]
    TooFewResolutions { needed: usize, got: usize },

    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("malformed row {row}: expected {expected} values, found {found}")]
    MalformedRow { row: usize, expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
