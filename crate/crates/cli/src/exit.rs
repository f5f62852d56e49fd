//! Exit codes and the machine-readable error line.
//!
//! Every failure prints one line to stderr:
//!
//! ```text
//! error code=<n> kind=<kind> message=<single-line text>
//! ```

use std::io::ErrorKind;
use std::process::ExitCode;

use cassi_unfold::Error;
use tensorgrad::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Internal,
    Usage,
    MissingFile,
    Format,
    InvalidInput,
    Numerical,
    CheckFailed,
}

impl Failure {
    pub fn code(self) -> u8 {
        match self {
            Failure::Internal => 1,
            Failure::Usage => 2,
            Failure::MissingFile => 3,
            Failure::Format => 4,
            Failure::InvalidInput => 5,
            Failure::Numerical => 6,
            Failure::CheckFailed => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Failure::Internal => "internal",
            Failure::Usage => "usage",
            Failure::MissingFile => "missing_file",
            Failure::Format => "format",
            Failure::InvalidInput => "invalid_input",
            Failure::Numerical => "numerical",
            Failure::CheckFailed => "check_failed",
        }
    }
}

/// Raised by `gradcheck` when a tolerance is exceeded.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn io_kind(e: &std::io::Error) -> Failure {
    match e.kind() {
        ErrorKind::NotFound => Failure::MissingFile,
        ErrorKind::InvalidData | ErrorKind::UnexpectedEof => Failure::Format,
        _ => Failure::Internal,
    }
}

fn autodiff_kind(e: &AutodiffError) -> Failure {
    match e {
        AutodiffError::Io(io) => io_kind(io),
        AutodiffError::Format(_) => Failure::Format,
        AutodiffError::NonFinite { .. } => Failure::Numerical,
        AutodiffError::GradCheck { .. } => Failure::CheckFailed,
        _ => Failure::Internal,
    }
}

fn core_kind(e: &Error) -> Failure {
    match e {
        Error::Io(io) => io_kind(io),
        Error::Autodiff(a) => autodiff_kind(a),
        Error::Format(_) | Error::Truncated { .. } | Error::DtypeMismatch { .. } => Failure::Format,
        Error::NonFiniteLoss { .. } => Failure::Numerical,
        Error::Dimension(_)
        | Error::BandOutOfRange { .. }
        | Error::NotBijection(_)
        | Error::SizeGuard(_)
        | Error::InvalidParameter(_)
        | Error::Config(_) => Failure::InvalidInput,
    }
}

pub fn classify(err: &anyhow::Error) -> Failure {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_kind(e);
        }
        if let Some(e) = cause.downcast_ref::<AutodiffError>() {
            return autodiff_kind(e);
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return io_kind(e);
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return Failure::InvalidInput;
        }
        if cause.downcast_ref::<CheckFailed>().is_some() {
            return Failure::CheckFailed;
        }
    }
    Failure::Internal
}

pub fn error_line(kind: Failure, message: &str) -> String {
    let flat = message.replace('\n', " | ");
    format!(
        "error code={} kind={} message={}",
        kind.code(),
        kind.name(),
        flat.trim()
    )
}

pub fn report(err: &anyhow::Error) -> ExitCode {
    let kind = classify(err);
    eprintln!("{}", error_line(kind, &format!("{err:#}")));
    ExitCode::from(kind.code())
}

pub fn report_usage(message: &str) -> ExitCode {
    eprintln!("{}", error_line(Failure::Usage, message));
    ExitCode::from(Failure::Usage.code())
}
