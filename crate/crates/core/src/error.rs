use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or model configuration is unusable (for example a
    /// non-positive correlation coefficient from the Doppler model).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Numerical integration did not reach its tolerance.
    #[error(
        "accuracy error: {context}: achieved error estimate {achieved:e} exceeds target {target:e}"
    )]
    Accuracy {
        context: &'static str,
        achieved: f64,
        target: f64,
    },

    /// The reliability constraint cannot be met by any positive rate.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A scheduling policy failed during a simulation run.
    #[error("policy failed at frame {frame}: {source}")]
    Policy {
        frame: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    /// True when the root cause is a quadrature accuracy failure.
    pub fn is_accuracy(&self) -> bool {
        match self {
            Error::Accuracy { .. } => true,
            Error::Policy { source, .. } => source.is_accuracy(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
