use std::fmt;
use std::path::Path;

use sfbox::boxplot::BoxplotError;
use sfbox::depth::DepthError;
use sfbox::eval::EvalError;
use sfbox::fdata::FdataError;
use sfbox::fpca::FpcaError;
use sfbox::render::RenderError;
use sfbox::simgen::SimError;

/// Failure of one CLI run, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or option values (exit 2).
    Usage(String),
    /// Unreadable or malformed input, unwritable output (exit 3).
    Io(String),
    /// A numerical routine failed (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
            Self::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<FdataError> for CliError {
    fn from(e: FdataError) -> Self {
        match e {
            FdataError::Malformed { .. }
            | FdataError::NonFinite { .. }
            | FdataError::Duplicate { .. }
            | FdataError::MissingColumn(_)
            | FdataError::EmptySubject(_)
            | FdataError::Csv(_)
            | FdataError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<FpcaError> for CliError {
    fn from(e: FpcaError) -> Self {
        match e {
            FpcaError::Options(m) => Self::Usage(m),
            FpcaError::Data(d) => d.into(),
            e => Self::Numeric(e.to_string()),
        }
    }
}

impl From<DepthError> for CliError {
    fn from(e: DepthError) -> Self {
        match e {
            DepthError::Beta(_) => Self::Usage(e.to_string()),
            e => Self::Numeric(e.to_string()),
        }
    }
}

impl From<BoxplotError> for CliError {
    fn from(e: BoxplotError) -> Self {
        match e {
            BoxplotError::Factor(_) => Self::Usage(e.to_string()),
            e => Self::Numeric(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnknownModel(_) | SimError::Config(_) => Self::Usage(e.to_string()),
            SimError::Data(d) => d.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => Self::Usage(e.to_string()),
            EvalError::Sim(e) => e.into(),
            EvalError::Fpca(e) => e.into(),
            EvalError::Depth(e) => e.into(),
            EvalError::Boxplot(e) => e.into(),
            EvalError::Data(e) => e.into(),
            e => Self::Numeric(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Json(_) | RenderError::Schema(_) => Self::Io(e.to_string()),
            e => Self::Usage(e.to_string()),
        }
    }
}
