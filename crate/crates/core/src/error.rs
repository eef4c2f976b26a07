use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{0} must be > 0, got {1}")]
    NonPositive(&'static str, f64),
    #[error("position is not finite")]
    NonFinitePosition,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace for device {0} has no samples")]
    Empty(usize),
    #[error("trace for device {device}: time steps must be strictly increasing ({prev} then {next})")]
    NotIncreasing { device: usize, prev: u64, next: u64 },
    #[error("trace for device {0} contains a non-finite position")]
    NonFinite(usize),
    #[error("{what} ids must be 0..n in ascending order; expected {expected}, found {found}")]
    BadIds {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("synthetic trace spec: {0}")]
    BadSpec(String),
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("remaining capacity {c} outside [0, {capacity}]")]
    CapacityOutOfRange { c: f64, capacity: f64 },
    #[error("relay reward needs the neighbour's remaining capacity")]
    MissingNeighbor,
    #[error("q-table snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("probabilities must lie in [0, 1] and sum to 1 (got {0:?})")]
    InvalidProbabilities([f64; 4]),
}

/// One violated constraint, addressed by its JSON field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config:\n{}", format_field_errors(.0))]
    Invalid(Vec<FieldError>),
}

fn format_field_errors(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: u64, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(
        "run failed for policy {policy}, lambda_d {lambda_d}, delta {delta}, seed {seed}: {source}\nconfig: {config}"
    )]
    Experiment {
        policy: String,
        lambda_d: u64,
        delta: u64,
        seed: u64,
        config: String,
        #[source]
        source: Box<SimError>,
    },
    #[error("{0}")]
    Input(String),
}
