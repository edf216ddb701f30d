use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Shape or dimension disagreement between inputs.
    Shape(String),
    /// An argument violated a precondition.
    Invalid(String),
    /// Non-finite values where finite ones are required.
    NonFinite(String),
    /// A weights or spec file violated the on-disk format.
    Format(String),
    /// Text parse failure with 1-based line number.
    Parse { line: usize, message: String },
    /// Training aborted because the loss became non-finite.
    Diverged {
        step: usize,
        history: Vec<crate::distill::EpochLoss>,
    },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::Invalid(m) => write!(f, "invalid argument: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite values: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Diverged { step, .. } => write!(f, "training diverged at step {step}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
