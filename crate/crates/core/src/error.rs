use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("not a NIfTI-1 file: {0}")]
    NotNifti(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("fold plan error: {0}")]
    Plan(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("experiment error: {0}")]
    Experiment(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable, machine-readable identifier of the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::IncompatibleGrids(_) => "incompatible-grids",
            Error::InvalidGeometry(_) => "invalid-geometry",
            Error::NotNifti(_) => "not-nifti",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::CorruptFile(_) => "corrupt-file",
            Error::DegenerateHistogram(_) => "degenerate-histogram",
            Error::Manifest(_) => "manifest-error",
            Error::Plan(_) => "plan-error",
            Error::Config(_) => "config-error",
            Error::Experiment(_) => "experiment-error",
            Error::Io(_) => "io-error",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Manifest(format!("{other:?}")),
        }
    }
}
