use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("missing {}: run `opcrecipe {producer} --out <run dir>` first", .path.display())]
    Missing { path: PathBuf, producer: &'static str },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) | CliError::Missing { .. } => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    serde_json::Error,
    csv::Error,
    opcrecipe::geometry::GeometryError,
    opcrecipe::opc::OpcError,
    opcrecipe::metrics::MetricsError,
    opcrecipe::rl::RlError,
    opcrecipe::features::FeatureError,
    opcrecipe::recipes::RecipeError,
    opcrecipe_annotator::AnnotatorError
);
