use alloc::string::String;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} out of range (network has {count} nodes)")]
    NodeOutOfRange { node: usize, count: usize },

    #[error("policy fault at agent {agent}: {reason}")]
    PolicyFault { agent: usize, reason: String },

    #[error(
        "action space explosion: C({pool}, {size}) = {count} exceeds the cap of {cap}; \
         use a smaller capacity or a lower per-step request cap"
    )]
    ActionExplosion {
        pool: usize,
        size: usize,
        count: u128,
        cap: u64,
    },

    #[error("non-finite value in Q update")]
    NonFinite,

    #[error("malformed encoding: {0}")]
    Malformed(String),

    #[error("trace does not match the network: {0}")]
    TraceMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
