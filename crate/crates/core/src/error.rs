use thiserror::Error;

use crate::baselines::BaselineError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::features::FeatureError;
use crate::models::ModelError;
use crate::numerics::NumericsError;
use crate::pgm::PgmError;
use crate::render::RenderError;
use crate::training::TrainingError;

/// Crate-wide error; each module keeps its own enum and converts into this one.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Models(#[from] ModelError),
    #[error(transparent)]
    Baselines(#[from] BaselineError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

impl Error {
    /// True for problems with the inputs (bad files, inconsistent data or
    /// configuration) as opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Numerics(_) => false,
            Error::Dataset(e) => !matches!(e, DatasetError::Io { .. }),
            Error::Features(e) => e.is_validation(),
            Error::Models(e) => e.is_validation(),
            Error::Baselines(e) => e.is_validation(),
            Error::Training(e) => e.is_validation(),
            Error::Eval(e) => e.is_validation(),
            Error::Render(e) => e.is_validation(),
            Error::Pgm(e) => !matches!(e, PgmError::Io(_)),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
