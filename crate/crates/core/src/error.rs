use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} size {size} is not divisible by angular side {angular}")]
    NotDivisible {
        axis: &'static str,
        size: usize,
        angular: usize,
    },

    #[error("sample {value} at flat index {index} is outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f64 },

    #[error("angular index ({u}, {v}) out of range for angular side {angular}")]
    AngularIndexOutOfRange { u: usize, v: usize, angular: usize },

    #[error("angular side {0} must be even")]
    OddAngular(usize),

    #[error("expected {expected} channel(s), found {found}")]
    ChannelCount { expected: usize, found: usize },

    #[error("missing perspective view ({u}, {v})")]
    MissingView { u: usize, v: usize },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("missing models for keys: {}", format_keys(.0))]
    MissingModels(Vec<(usize, usize, usize)>),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn format_keys(keys: &[(usize, usize, usize)]) -> String {
    keys.iter()
        .map(|(u, v, c)| format!("({u},{v},{c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Short category label used by command-line front ends.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NotDivisible { .. }
            | Error::SampleOutOfRange { .. }
            | Error::AngularIndexOutOfRange { .. }
            | Error::OddAngular(_)
            | Error::ChannelCount { .. }
            | Error::MissingView { .. }
            | Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "divergence",
            Error::MissingModels(_) | Error::ModelFormat(_) => "model",
            Error::Container { .. } | Error::Image { .. } | Error::Json { .. } => "data",
            Error::Io { .. } => "io",
        }
    }

    pub fn shape(
        context: &'static str,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
