use thiserror::Error;

use crate::linalg::InverseFailure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which matrix an inversion or definiteness check was applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpoint {
    /// R1 + D1' P D1, the follower's effective control weight.
    FollowerWeight,
    /// T22 in the leader's reduced cost.
    LeaderWeight,
    /// I + Sigma * T11~, the decoupling factor.
    Decoupling,
    /// T11~ itself (needed by the scalar rewrite).
    SchurComplement,
    /// T11~ + P_lambda in the lambda-family equation.
    LambdaBlock,
    /// P_lambda, inverted in the jump coupling.
    LambdaValue,
}

impl std::fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Checkpoint::FollowerWeight => "follower weight R1 + D1'PD1",
            Checkpoint::LeaderWeight => "leader weight T22",
            Checkpoint::Decoupling => "decoupling factor I + Sigma T11~",
            Checkpoint::SchurComplement => "Schur complement T11~",
            Checkpoint::LambdaBlock => "lambda block T11~ + P",
            Checkpoint::LambdaValue => "lambda solution P",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch for `{key}`: expected {expected}, found {found}")]
    Dimension {
        key: String,
        expected: String,
        found: String,
    },

    #[error("`{key}` is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { key: String, asymmetry: f64 },

    #[error("generator entry ({row}, {col}): {reason}")]
    Generator {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("{checkpoint} failed at s = {time}, regime {regime}: {failure}")]
    Singular {
        checkpoint: Checkpoint,
        time: f64,
        regime: usize,
        failure: InverseFailure,
    },

    #[error("solution exceeded 1e12 in magnitude near s = {time}; last valid node s = {last_valid}")]
    BlowUp { time: f64, last_valid: f64 },

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{excluded} of {total} paths diverged")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn singular(
        checkpoint: Checkpoint,
        time: f64,
        regime: usize,
        failure: InverseFailure,
    ) -> Self {
        Error::Singular {
            checkpoint,
            time,
            regime: regime + 1,
            failure,
        }
    }

    /// True for errors raised while reading or validating input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Dimension { .. }
                | Error::Asymmetric { .. }
                | Error::Generator { .. }
                | Error::Grid(_)
                | Error::InvalidArgument(_)
                | Error::Io(_)
        )
    }
}
