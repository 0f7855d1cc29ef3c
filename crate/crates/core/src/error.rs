use thiserror::Error;

/// Error type shared by all modules.
///
/// The variants map onto the process exit codes used by the command-line
/// front end: configuration and parameter problems exit with 2, capacity
/// (enumeration budget) violations with 3, and numerical failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A configuration document failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// An exact enumeration would exceed its capacity budget.
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),

    /// A numerical routine failed to converge or cross-validate.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An operation that requires an invertible matrix received a singular one.
    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::CapacityExceeded(_) => 3,
            Error::NumericalFailure(_) | Error::SingularInput(_) => 4,
            Error::Io(_) => 2,
        }
    }
}
