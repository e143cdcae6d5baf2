use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the synthesis, simulation and control pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{line}:{column}: {message}")]
    Semantic {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing ground directive")]
    MissingGround,

    #[error("singular topology: {0}")]
    SingularTopology(String),

    #[error("singular switch-state matrix for state {0}")]
    SingularSwitchState(String),

    #[error("unknown switching state {0}")]
    UnknownState(String),

    #[error("phase-shift component {component} = {value} outside [0, 1]")]
    CommandOutOfRange { component: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state at t = {time:e} s")]
    NonFinite { time: f64 },

    #[error("step size underflow at t = {time:e} s")]
    StepUnderflow { time: f64 },

    #[error("matrix exponential series diverged")]
    SeriesDivergence,

    #[error("training diverged at epoch {epoch} (state {state})")]
    TrainingDivergence { epoch: usize, state: String },

    #[error("non-finite cost at {point:?}")]
    NonFiniteCost { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Syntax { .. }
            | Error::Semantic { .. }
            | Error::MissingGround
            | Error::UnknownState(_)
            | Error::CommandOutOfRange { .. }
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::Io(_) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::SingularTopology(_)
            | Error::SingularSwitchState(_)
            | Error::NonFinite { .. }
            | Error::StepUnderflow { .. }
            | Error::SeriesDivergence
            | Error::TrainingDivergence { .. }
            | Error::NonFiniteCost { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
