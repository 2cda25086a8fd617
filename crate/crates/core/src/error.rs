use std::path::PathBuf;

use crate::embedding::EmbeddingError;
use crate::manifest::ManifestError;
use crate::metrics::MetricsError;
use crate::protocol::ProtocolError;
use crate::report::ReportError;
use crate::svm::SvmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input files and parameters.
    InputValidation,
    /// Failures while computing or writing results.
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Manifest(_) => ErrorClass::InputValidation,
            Error::Embedding(e) if e.is_format_error() => ErrorClass::InputValidation,
            Error::Report(e) if e.is_input_error() => ErrorClass::InputValidation,
            Error::Svm(SvmError::InvalidConfig(_)) => ErrorClass::InputValidation,
            Error::Protocol(e) => match e {
                ProtocolError::InvalidRatio(_)
                | ProtocolError::TooFewBonaFide(_)
                | ProtocolError::EmptyPartition { .. } => ErrorClass::InputValidation,
                ProtocolError::Embedding { source, .. } if source.is_format_error() => {
                    ErrorClass::InputValidation
                }
                ProtocolError::Svm {
                    source: SvmError::InvalidConfig(_),
                    ..
                } => ErrorClass::InputValidation,
                _ => ErrorClass::Runtime,
            },
            Error::Metrics(MetricsError::BadTarget(_)) => ErrorClass::InputValidation,
            // an input file that does not exist
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::InputValidation
            }
            _ => ErrorClass::Runtime,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ManifestError;

    #[test]
    fn classes() {
        let missing = Error::io("m.csv", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(missing.class(), ErrorClass::InputValidation);
        let denied = Error::io("out", std::io::Error::from(std::io::ErrorKind::PermissionDenied));
        assert_eq!(denied.class(), ErrorClass::Runtime);
        assert_eq!(Error::from(ManifestError::Empty).class(), ErrorClass::InputValidation);
        assert_eq!(
            Error::from(ProtocolError::InvalidRatio(1.5)).class(),
            ErrorClass::InputValidation
        );
        assert_eq!(
            Error::from(MetricsError::NonFiniteScore).class(),
            ErrorClass::Runtime
        );
    }
}
