use thiserror::Error;

use crate::datamodel::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// A loaded document parsed but broke a domain invariant.
    #[error("{0}")]
    Validation(String),

    #[error("no route from client class `{client_class}` to node `{target_node}`")]
    NoRoute {
        client_class: String,
        target_node: String,
    },

    #[error("invalid placement: {}", join_violations(.0))]
    InvalidPlacement(Vec<Violation>),

    #[error("catalog has no query templates")]
    EmptyCatalog,

    #[error("capacity change for node `{node_id}` to {vm_count} VMs is outside [{vm_min}, {vm_max}]")]
    CapacityOutOfBounds {
        node_id: String,
        vm_count: u32,
        vm_min: u32,
        vm_max: u32,
    },

    #[error("brute-force search over {assignments} assignments exceeds the limit of {limit}")]
    InstanceTooLarge { assignments: f64, limit: f64 },

    #[error("no public-tier node available")]
    NoPublicNode,

    #[error("regression is rank deficient (insufficient excitation)")]
    RankDeficient,

    #[error("need at least {needed} samples for order {order}, got {got}")]
    InsufficientData {
        needed: usize,
        got: usize,
        order: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no candidate gain yields a stable closed loop")]
    NoStableCandidate,
}

impl Error {
    /// Stable machine-readable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse(_) => "PARSE_ERROR",
            Error::Validation(_) => "VALIDATION_ERROR",
            Error::NoRoute { .. } => "NO_ROUTE",
            Error::InvalidPlacement(_) => "INVALID_PLACEMENT",
            Error::EmptyCatalog => "EMPTY_CATALOG",
            Error::CapacityOutOfBounds { .. } => "CAPACITY_OUT_OF_BOUNDS",
            Error::InstanceTooLarge { .. } => "INSTANCE_TOO_LARGE",
            Error::NoPublicNode => "NO_PUBLIC_NODE",
            Error::RankDeficient => "RANK_DEFICIENT",
            Error::InsufficientData { .. } => "INSUFFICIENT_DATA",
            Error::Dimension(_) => "DIMENSION_MISMATCH",
            Error::NoStableCandidate => "NO_STABLE_CANDIDATE",
        }
    }
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
