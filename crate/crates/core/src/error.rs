use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt image {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("image has zero area")]
    EmptyImage,
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("no inner zona pellucida boundary found ({0} usable samples)")]
    NoZonaPellucida(usize),
    #[error("admissible size region contains no grid point")]
    EmptySizeRegion,
    #[error("ellipse of size {a:.1}x{b:.1} cannot be placed inside the zona pellucida")]
    NoValidPlacement { a: f64, b: f64 },
    #[error("blastomere count {0} outside 1..=8")]
    CellCount(usize),
    #[error("could not place {n} cells within overlap {overlap} after {attempts} attempts")]
    Placement { n: usize, overlap: f64, attempts: usize },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
