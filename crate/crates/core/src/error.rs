use thiserror::Error;

use crate::topology::NodeId;

/// Errors raised by the localization pipeline and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no rigid seed: no mutually connected non-degenerate triangle in the 3-core")]
    NoRigidSeed,

    #[error("non-physical exchange: computed time of flight {0} us is not positive")]
    NonPhysicalExchange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rotation unresolvable: {0}")]
    RotationUnresolvable(String),

    #[error("node {0} cannot be localized this epoch: {1}")]
    Unlocalizable(NodeId, String),
}

pub type Result<T> = std::result::Result<T, Error>;
