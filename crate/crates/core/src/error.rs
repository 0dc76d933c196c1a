use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polyline must contain at least one point")]
    Empty,
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("degenerate input: polyline has zero length")]
    DegenerateInput,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("format error: {0}")]
    Format(String),
    #[error("gray value {0} is not declared in the class table")]
    Class(u8),
    #[error("invalid region `{id}`: {reason}")]
    InvalidRegion { id: String, reason: String },
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("episode already terminated")]
    NotRunning,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("insufficient data: need at least {needed} distinct waypoints, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("token {token} outside codebook range [0, {k})")]
    TokenOutOfRange { token: usize, k: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("codebook format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("remote policy timed out after {0:.3} s")]
    Timeout(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote policy reported an error: {0}")]
    Remote(String),
    #[error("token {token} outside codebook range [0, {k})")]
    TokenOutOfRange { token: usize, k: usize },
    #[error("no path: {0}")]
    NoPath(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("datapoint has no demonstration")]
    MissingDemo,
    #[error("misleading sketch generation failed up to sigma {sigma} m")]
    GenerationFailed { sigma: f64 },
    #[error("condition mismatch: {reason}")]
    ConditionMismatch {
        reason: String,
        segment: Option<usize>,
    },
    #[error("teleop session aborted: {0}")]
    SessionAborted(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DatasetError::File {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for dataset
    /// problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::CodebookMismatch(_) => 2,
            RunError::Dataset(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(what: &'static str) -> impl Fn(io::Error) -> RunError {
        move |source| RunError::Io {
            path: PathBuf::from(what),
            source,
        }
    }

    pub(crate) fn io_at(path: &std::path::Path) -> impl Fn(io::Error) -> RunError + '_ {
        move |source| RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    World(#[from] WorldError),
}
