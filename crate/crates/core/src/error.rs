use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    /// The wavefield became non-finite. `shot` is filled in by callers that
    /// iterate over shots.
    #[error("numeric blow-up at time step {step}{}", shot.map(|s| format!(" (shot {s})")).unwrap_or_default())]
    NumericBlowup { step: usize, shot: Option<usize> },

    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("resource guard: {what} needs {required} but the limit is {limit}")]
    ResourceGuard {
        what: &'static str,
        required: usize,
        limit: usize,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("spectral comparison fails at index {}: {:e} < {:e}", .0.index, .0.upper, .0.lower)]
    Counterexample(Box<crate::ntk::Counterexample>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Attach a shot index to a blow-up error.
    pub(crate) fn with_shot(self, shot: usize) -> Self {
        match self {
            Error::NumericBlowup { step, .. } => Error::NumericBlowup {
                step,
                shot: Some(shot),
            },
            other => other,
        }
    }

    /// Innermost error, skipping epoch context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Epoch { source, .. } => source.root(),
            other => other,
        }
    }
}
