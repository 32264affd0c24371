use thiserror::Error;

/// Errors produced by the modelling and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss contribution at dyad (banner {banner}, domain {domain})")]
    NonFiniteDyad { banner: u32, domain: u32 },

    #[error("optimization diverged after {epochs} epoch(s) (loss is not finite); try a smaller step size")]
    Diverged { epochs: usize },

    #[error("non-finite objective value: {0}")]
    NonFinite(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by numerical failure during optimization.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteDyad { .. } | Error::Diverged { .. } | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
