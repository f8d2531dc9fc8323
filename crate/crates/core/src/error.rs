use thiserror::Error;

use crate::balancing::BalancingError;
use crate::data::DataError;
use crate::latent::LatentError;
use crate::prognostic::PrognosticError;
use crate::stats::StatsError;
use crate::survival::SurvivalError;
use crate::synthetic::SynthError;

/// Top-level error; [`Error::exit_code`] maps it onto the CLI exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("report is empty: {0}")]
    EmptyReport(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Prognostic(#[from] PrognosticError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Balancing(#[from] BalancingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::EmptyReport(_) | Error::Json(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) => EXIT_DATA,
            Error::Prognostic(e) => match e {
                PrognosticError::MissingScore { .. }
                | PrognosticError::InsufficientLabels { .. } => EXIT_DATA,
                PrognosticError::InvalidFolds(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
            Error::Latent(e) => match e {
                LatentError::InvalidConfig(_) => EXIT_CONFIG,
                LatentError::Data(_) => EXIT_DATA,
                LatentError::Survival(SurvivalError::GroupTooSmall { .. }) => EXIT_DATA,
                _ => EXIT_NUMERICAL,
            },
            Error::Balancing(e) => match e {
                BalancingError::Data(_) => EXIT_DATA,
                _ => EXIT_NUMERICAL,
            },
            Error::Synth(e) => match e {
                SynthError::InvalidConfig(_) => EXIT_CONFIG,
                SynthError::DegenerateArm { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
            Error::Survival(_) | Error::Stats(_) => EXIT_NUMERICAL,
        }
    }
}
