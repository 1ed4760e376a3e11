use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    Numeric(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown layer `{0}`")]
    Lookup(String),
    #[error("optimizer state error: {0}")]
    State(String),
    #[error("step index must be >= 1 for moment optimizers, got {0}")]
    StepIndex(u64),
    #[error("incompatible adapters: {0}")]
    Incompatible(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("{stage}: {inner}")]
    Stage { stage: &'static str, inner: Box<Error> },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Tag an error with the workflow stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                inner: Box::new(other),
            },
        }
    }

    /// The error with any stage tag removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { inner, .. } => inner.root(),
            other => other,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
