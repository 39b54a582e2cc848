use std::process::ExitCode;

/// Errors of the IO layer, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numeric failure: {0}")]
    Numeric(strucprop_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<strucprop_core::Error> for Error {
    fn from(e: strucprop_core::Error) -> Self {
        use strucprop_core::Error as C;
        match e {
            C::InvalidParameter(m) | C::InvalidShape(m) => Error::Config(m),
            C::ShapeMismatch(m) | C::Empty(m) => Error::Data(m),
            C::NotBinary => Error::Data("grid is not binary".into()),
            other => Error::Numeric(other),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl Error {
    /// 2 config, 3 data (including IO), 4 numeric failure.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        })
    }
}
