use thiserror::Error;

use crate::cart::CartError;
use crate::cgm::CgmError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Each variant wraps the error of one module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cgm(#[from] CgmError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Cart(#[from] CartError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error stems from bad input data rather than a broken
    /// internal invariant.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Cgm(_) | Error::Feature(_) | Error::Config(_) | Error::Json(_) => true,
            Error::Cart(e) => e.is_validation(),
            Error::Eval(e) => e.is_validation(),
            Error::Synth(_) => true,
            Error::Io(_) => true,
        }
    }
}
