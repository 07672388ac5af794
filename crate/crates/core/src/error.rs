use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` has an empty {field}")]
    EmptyText { id: String, field: &'static str },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("only {groups} groups available for {buckets} non-empty split buckets")]
    InsufficientGroups { groups: usize, buckets: usize },
    #[error("distractor shortfall: need {needed}, only {available} usable after dedup ({shortfall} short)")]
    InsufficientDistractors {
        needed: usize,
        available: usize,
        shortfall: usize,
    },
}
