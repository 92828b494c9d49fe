use thiserror::Error;

/// Error type shared by the whole crate.
///
/// The variants follow the failure taxonomy used in the module docs:
/// `Parameter` for out-of-range configuration scalars, `Input` for malformed
/// data handed to an otherwise well-configured operation, `AdjusterSpec` for
/// structurally invalid adjusters, `Rule` for stopping-rule evaluation
/// failures, `Config` for semantic problems in experiment configs, and
/// `Parse` for syntactic ones.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid adjuster spec: {0}")]
    AdjusterSpec(String),

    #[error("stopping rule error: {0}")]
    Rule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
