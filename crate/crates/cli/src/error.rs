//! CLI error type with the documented exit-code mapping: 1 validation,
//! 2 data, 3 divergence, 4 internal.

use causaltwin_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, graph, or scenario references. Exit code 1.
    #[error("validation failure: {0}")]
    Validation(String),

    /// Unreadable, malformed, or degenerate input data. Exit code 2.
    #[error("data error: {0}")]
    Data(String),

    /// Training or simulation blew up. Exit code 3.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Anything that indicates a bug rather than bad input. Exit code 4.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let text = e.to_string();
        match e {
            CoreError::Divergence { .. } | CoreError::UnstableSystem { .. } => {
                CliError::Divergence(text)
            }
            CoreError::InvalidGraph(_)
            | CoreError::GraphFile(_)
            | CoreError::UnknownNode(_)
            | CoreError::UnknownEdge { .. }
            | CoreError::LagOutOfRange { .. }
            | CoreError::BadConfig(_)
            | CoreError::BadNoiseScale { .. }
            | CoreError::BadSpectrogramParams(_)
            | CoreError::WhatIfTargetCycle { .. } => CliError::Validation(text),
            CoreError::NonFiniteValue { .. }
            | CoreError::EmptySeries
            | CoreError::SeriesTooShort { .. }
            | CoreError::ConstantChannel(_)
            | CoreError::ZeroVariance(_)
            | CoreError::ConstantSpectrum
            | CoreError::EmptyBand(_)
            | CoreError::RankDeficient { .. } => CliError::Data(text),
            CoreError::DimensionMismatch { .. }
            | CoreError::LengthMismatch { .. }
            | CoreError::LayoutMismatch { .. } => CliError::Internal(text),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a file path to an io error so the user learns which file broke.
pub fn io_context(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {}", path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Validation(String::new()).exit_code(), 1);
        assert_eq!(CliError::Data(String::new()).exit_code(), 2);
        assert_eq!(CliError::Divergence(String::new()).exit_code(), 3);
        assert_eq!(CliError::Internal(String::new()).exit_code(), 4);
    }

    #[test]
    fn core_errors_map_to_matching_codes() {
        let unstable = CoreError::UnstableSystem {
            radius: 1.2,
            limit: 0.999,
        };
        assert_eq!(CliError::from(unstable).exit_code(), 3);
        let graph = CoreError::InvalidGraph("cycle".into());
        assert_eq!(CliError::from(graph).exit_code(), 1);
        let data = CoreError::EmptySeries;
        assert_eq!(CliError::from(data).exit_code(), 2);
        let internal = CoreError::LengthMismatch {
            expected: 3,
            actual: 4,
        };
        assert_eq!(CliError::from(internal).exit_code(), 4);
    }
}
