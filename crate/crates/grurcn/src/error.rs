use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] grurcn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl ToString) -> Error {
        Error::Format {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use grurcn_core::Error as C;
        match self {
            Error::Config(_) | Error::Core(C::Invalid(_) | C::LabelOutOfRange { .. }) => 2,
            Error::Core(C::NonFinite { .. }) | Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}
