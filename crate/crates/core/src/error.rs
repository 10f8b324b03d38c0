use thiserror::Error;

use crate::bundle::BundleError;
use crate::explain::ExplainError;
use crate::features::FeatureError;
use crate::infer::InferError;
use crate::ingest::IngestError;
use crate::nn::NnError;
use crate::tokenize::TokenizeError;
use crate::train::TrainError;

/// Crate-level error for operations that span several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
