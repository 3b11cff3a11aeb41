use std::path::PathBuf;

use thiserror::Error;

use crate::xml::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("invalid channel registry: {0}")]
    Registry(String),

    #[error("line {line}: {message}")]
    RegistryLine { line: usize, message: String },

    #[error("observation {index}: value contains the reserved `</value>` tag")]
    ForbiddenValueTag { index: usize },

    #[error("observation {index}: {mode} rendering requires a value")]
    MissingValue { index: usize, mode: &'static str },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("template {template} does not accept {mode} observation blocks")]
    TemplateMismatch { template: String, mode: String },

    #[error("malformed template asset {0}: {1}")]
    Template(String, String),

    #[error("class index {label} is not valid for task {task}")]
    InvalidLabel { label: usize, task: String },

    #[error("invalid task configuration: {0}")]
    TaskConfig(String),

    #[error("SFT export: {0}")]
    Export(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid metric input: {0}")]
    MetricInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing required column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
