use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value {value} outside [0, 1]")]
    OutOfUnitRange { value: f64 },
    #[error("cannot choose {k} distinct items from a pool of {pool}")]
    ChooseTooMany { k: usize, pool: usize },
    #[error("sample {0} has no precomputed region labels")]
    MissingRegionLabels(String),
    #[error("attack must linearize at the identity mapping (rho == 0)")]
    NonIdentityAttackOrigin,
    #[error("empty training split")]
    EmptyTrainingSplit,
    #[error("holdout domain {0} not present in dataset")]
    UnknownHoldout(u32),
    #[error("container: {0}")]
    Container(#[from] crate::container::ContainerError),
}

pub type Result<T> = core::result::Result<T, Error>;
