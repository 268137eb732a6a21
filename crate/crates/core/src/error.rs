use thiserror::Error;

use crate::attribution::AttributionError;
use crate::backend::BackendError;
use crate::decoder::DecodeError;
use crate::graph::GraphError;
use crate::modularizer::ExtractError;
use crate::prompt::PromptError;
use crate::sweep::SweepError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
