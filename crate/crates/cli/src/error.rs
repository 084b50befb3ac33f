use lungxai::error::ErrorKind;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, keys or values.
    Usage(String),
    /// Missing or unusable inputs and artifacts.
    Data(String),
    Core(lungxai::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lungxai::Error> for CliError {
    fn from(e: lungxai::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        let kind = match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Data(_) => ErrorKind::Data,
            CliError::Core(e) => e.kind(),
        };
        match kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Runtime => 3,
        }
    }
}

pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Core(lungxai::Error::io(path, e))
}
