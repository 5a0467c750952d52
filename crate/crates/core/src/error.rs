use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed forest document: {0}")]
    Malformed(String),

    #[error("unknown feature reference {index} (the forest declares {count} features)")]
    UnknownFeature { index: usize, count: usize },

    #[error("operator `{op}` cannot be applied to {kind} feature `{feature}`")]
    OperatorMismatch {
        op: String,
        kind: &'static str,
        feature: String,
    },

    #[error("tree {0} has no root node")]
    EmptyTree(usize),

    #[error("invalid forest: {0}")]
    InvalidForest(String),

    #[error("value `{value}` is not declared for feature `{feature}`")]
    UnknownValue { feature: String, value: String },

    #[error("input assigns {got} values but the forest declares {expected} features")]
    InputLength { got: usize, expected: usize },

    #[error("invalid input for feature `{feature}`: {reason}")]
    InvalidInput { feature: String, reason: String },

    #[error("{classes} equivalence classes exceed the exact-enumeration cap of {cap}; use the sampler instead")]
    CapExceeded { classes: u128, cap: u64 },

    #[error("the number of equivalence classes overflows a 128-bit counter")]
    ClassCountOverflow,

    #[error("the conditioning event has no support among non-ambiguous equivalence classes")]
    ZeroProbability,

    #[error("only feature arguments can form a reason, got {0}")]
    NonFeatureReason(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("DIMACS line {line}: {reason}")]
    Dimacs { line: usize, reason: String },

    #[error("too many variables for brute-force counting: {vars} > {cap}")]
    TooManyVariables { vars: usize, cap: usize },

    #[error("query `{query}`: {reason}")]
    Query { query: String, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
