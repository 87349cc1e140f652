use crate::fingerprint::MinirunId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("filter is full ({used} of {limit} slots in use, {needed} more requested)")]
    FilterFull {
        used: usize,
        limit: usize,
        needed: usize,
    },
    #[error("no fingerprint at rank {rank} of minirun {id:?}")]
    NotFound { id: MinirunId, rank: usize },
    #[error("key {0:#018x} is not stored")]
    KeyNotFound(u64),
    #[error("rank {rank} out of bounds for minirun list of length {len}")]
    RankOutOfBounds { rank: usize, len: usize },
    #[error("adaptation exhausted after {0} extension chunks")]
    AdaptationExhausted(usize),
    #[error("reverse map has no entry for rank {rank} of minirun {id:?}")]
    MapInconsistency { id: MinirunId, rank: usize },
    #[error("input is not sorted by hash at item {0}")]
    UnsortedInput(usize),
    #[error("filters have incompatible configurations")]
    ConfigMismatch,
    #[error("key {0:#018x} appears in both the yes and no lists")]
    OverlappingInput(u64),
    #[error(
        "yes/no construction failed: adaptivity consumed {consumed_bits} bits of a {budget_bits}-bit budget"
    )]
    ConstructionFailed { consumed_bits: u64, budget_bits: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
