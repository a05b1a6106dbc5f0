use std::fmt;
use std::io;
use std::path::Path;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Numerical, message: message.into() }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cpseg::Error> for CliError {
    fn from(e: cpseg::Error) -> Self {
        use cpseg::Error as E;
        let kind = match &e {
            E::Config(_) | E::Tensor(_) => ExitKind::Usage,
            E::Io { .. } | E::Nifti { .. } | E::Checkpoint { .. } | E::Data(_) => ExitKind::Data,
            E::Numerical(_) => ExitKind::Numerical,
        };
        CliError { kind, message: e.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(cpseg::Error::Config("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(cpseg::Error::Data("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(cpseg::Error::Numerical("x".into())).exit_code(), 3);
    }
}
