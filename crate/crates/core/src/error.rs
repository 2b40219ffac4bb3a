//! Error type shared across the library.
//!
//! Every failure is tagged with a coarse class (`ErrorClass`) so callers —
//! the CLI in particular — can map configuration mistakes, filesystem
//! problems, and numerical breakdowns to distinct exit codes.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration, bad CLI arguments, malformed settings files.
    #[error("config: {0}")]
    Config(String),

    /// Filesystem or image encode/decode failure.
    #[error("io: {path}: {message}")]
    Io { path: PathBuf, message: String },

    /// Geometric preconditions violated (no intersection, backfacing
    /// reflection, off-surface query, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// Query outside a field's domain (bounding box, unit disk, image).
    #[error("domain: {0}")]
    Domain(String),

    /// API used out of order (e.g. backward pass without a recorded forward).
    #[error("state: {0}")]
    State(String),

    /// Non-finite values or failed numerical routines.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Degenerate input to the ellipse fitter.
    #[error("ellipse fit: {0}")]
    Fit(String),
}

/// Coarse failure class; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Domain(_) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
            Error::Geometry(_) | Error::State(_) | Error::Numeric(_) | Error::Fit(_) => {
                ErrorClass::Numerical
            }
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.into(), message: err.to_string() }
    }
}
