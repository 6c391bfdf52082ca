use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("invalid phase set: {0}")]
    InvalidPhaseSet(String),
    #[error("element {element}: phase index {index} outside [0, {levels})")]
    InvalidProfileIndex { element: usize, index: usize, levels: usize },
    #[error("transmit power {power} W outside [0, {max}] W")]
    PowerOutOfRange { power: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("config: {path}: {message}")]
    Config { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing artifact {0}; run the upstream stage first")]
    MissingArtifact(String),
    #[error("artifact {artifact} belongs to config {found}, run directory is {expected}")]
    ConfigMismatch { artifact: String, expected: String, found: String },
    #[error("integrity check failed for {0}")]
    Integrity(String),
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("replay mismatch: logged {logged}, recomputed {recomputed}")]
    ReplayMismatch { logged: String, recomputed: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable category, used by the CLI's error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Channel(_) => "channel",
            Error::Nn(_) => "nn",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Diverged(_) => "diverged",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::ConfigMismatch { .. } => "config_mismatch",
            Error::Integrity(_) => "integrity",
            Error::Locked(_) => "locked",
            Error::ReplayMismatch { .. } => "replay_mismatch",
            Error::Invalid(_) => "invalid",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
