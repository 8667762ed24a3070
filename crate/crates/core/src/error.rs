//! Error types shared across the solver library.

use std::path::PathBuf;

/// Coarse failure category, used by callers (e.g. the CLI) to map errors
/// onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Aggregated configuration validation failures, one message per field.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    ConfigIssues(Vec<String>),

    #[error("fine grid n = {n} is not divisible by coarse grid N = {coarse_n}")]
    IndivisibleGrid { n: usize, coarse_n: usize },

    #[error("size mismatch in {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("incompatible data on component {component}: net source/flux defect {defect:.3e}")]
    Incompatible { component: usize, defect: f64 },

    #[error("factorization failed: {0}")]
    Singular(String),

    #[error("solve residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("offline basis columns of coarse edge {edge} are numerically dependent")]
    DependentBasis { edge: usize },

    #[error("pencil on coarse edge {edge} is degenerate: {msg}")]
    DegeneratePencil { edge: usize, msg: String },

    #[error("spectral problem 2 requires snapshot pressures")]
    MissingPressures,

    #[error("selection count {requested} out of range 1..={max}")]
    SelectionOutOfRange { requested: usize, max: usize },

    #[error("requested {requested} modes but ensemble has numerical rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("relative error metric undefined: {what} has zero norm")]
    UndefinedMetric { what: &'static str },

    #[error(
        "saturation overshoot {overshoot:.3e} after transport step; time step too large for CFL"
    )]
    StepSize { overshoot: f64 },

    #[error("cannot read permeability file {path}: {source}")]
    LoadIo {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("permeability file {path}: value at token offset {offset} is not a number")]
    LoadParse { path: PathBuf, offset: usize },

    #[error("permeability file {path}: non-positive value {value} at token offset {offset}")]
    LoadNonPositive {
        path: PathBuf,
        offset: usize,
        value: f64,
    },

    #[error(
        "permeability file {path}: short read, needed {needed} values for layer {layer}, found {found}"
    )]
    LoadShortRead {
        path: PathBuf,
        layer: usize,
        needed: usize,
        found: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Config(_) | ConfigIssues(_) | IndivisibleGrid { .. } | SizeMismatch { .. }
            | SelectionOutOfRange { .. } => ErrorCategory::Config,
            LoadIo { .. } | LoadParse { .. } | LoadNonPositive { .. } | LoadShortRead { .. }
            | Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
