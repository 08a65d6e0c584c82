use thiserror::Error;

/// Coarse classification used for CLI exit codes and FFI status values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or a request outside an operation's domain.
    Config,
    /// Input data that is malformed or inconsistent with the market.
    Data,
    /// Estimation cannot proceed on the given sample or design.
    Degenerate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid profile for student {student}: {reason}")]
    InvalidProfile { student: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("insufficient data on the {side} side: {n} usable observations")]
    InsufficientData { side: &'static str, n: usize },

    #[error("impossible event: {0}")]
    ImpossibleEvent(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Io(_) => ErrorKind::Config,
            Error::InvalidProfile { .. } | Error::Data(_) | Error::ImpossibleEvent(_) => {
                ErrorKind::Data
            }
            Error::DegenerateDesign(_)
            | Error::SingularDesign(_)
            | Error::InsufficientData { .. }
            | Error::Invariant(_) => ErrorKind::Degenerate,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
