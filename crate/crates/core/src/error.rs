use thiserror::Error;

/// Errors raised by game evaluation, certification and stability analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("non-finite value in {what} for player {player}")]
    NonFiniteValue { what: &'static str, player: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("game does not expose the risk/divergence split")]
    UnsupportedGame,

    #[error("best response of player {0} is not unique: block Hessian is not positive definite")]
    SingularBlock(usize),

    #[error("matrix is not symmetric within tolerance (asymmetry {0:e})")]
    AsymmetricInput(f64),

    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    ConvergenceFailure(usize),

    #[error("spectrum is not Hurwitz: eigenvalue with real part {0:e} >= 0")]
    NotHurwitz(f64),

    #[error("method {0} has no linear amplification matrix")]
    UnsupportedMethod(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("accuracy contract violated: {0}")]
    AccuracyContract(String),
}

pub type Result<T> = std::result::Result<T, GameError>;
