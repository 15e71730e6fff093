use std::fmt;

use crate::model::NodeId;

/// First violated structural invariant of a rooted tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    Empty,
    DuplicateNode(NodeId),
    UnknownRoot(NodeId),
    UnknownEndpoint(NodeId),
    SelfLoop(NodeId),
    RootHasOutEdge(NodeId),
    MultipleOutEdges(NodeId),
    Cycle(Vec<NodeId>),
    Disconnected(NodeId),
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::Empty => write!(f, "tree has no nodes"),
            TreeViolation::DuplicateNode(u) => write!(f, "node {u} listed twice"),
            TreeViolation::UnknownRoot(u) => write!(f, "root {u} is not a node"),
            TreeViolation::UnknownEndpoint(u) => write!(f, "edge endpoint {u} is not a node"),
            TreeViolation::SelfLoop(u) => write!(f, "self-loop at node {u}"),
            TreeViolation::RootHasOutEdge(u) => write!(f, "root {u} has an outgoing edge"),
            TreeViolation::MultipleOutEdges(u) => {
                write!(f, "node {u} has more than one outgoing edge")
            }
            TreeViolation::Cycle(nodes) => {
                let path: Vec<String> = nodes.iter().map(|u| u.to_string()).collect();
                write!(f, "cycle through {}", path.join(" -> "))
            }
            TreeViolation::Disconnected(u) => {
                write!(f, "node {u} has no directed path to the root")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    Tree(TreeViolation),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("invalid cut: {0}")]
    InvalidCut(String),

    #[error("invalid source model: {0}")]
    InvalidModel(String),

    #[error("function table: {0}")]
    InvalidFunction(String),

    #[error("malformed instance at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("conditioning on a zero-probability event")]
    ZeroProbabilityCondition,

    #[error("invalid composite coordinates: {0}")]
    InvalidCoordinates(String),

    /// H(f | L, K) != 0: two positive-probability source tuples share an
    /// (l, k) pair but disagree on f.
    #[error("function is not determined by (L, K): {0}")]
    NotDetermined(String),

    #[error("{what} exceeds guard: {actual} > {limit}")]
    GuardExceeded {
        what: &'static str,
        limit: usize,
        actual: usize,
    },

    #[error("letter {0} has positive probability but no independent set covers it")]
    UncoveredVertex(usize),

    #[error("Markov property violated at node {node}: {detail}")]
    MarkovViolated { node: NodeId, detail: String },

    #[error("sources are not independent: {0}")]
    NotIndependent(String),

    #[error("invalid auxiliary family: {0}")]
    InvalidFamily(String),

    #[error("maximal independent sets overlap at vertex {vertex}")]
    PartitionOverlap { vertex: usize },

    #[error("randomized message at node {0}; use sample_runs for randomized families")]
    RandomizedFamily(NodeId),

    #[error("realization has zero probability")]
    ZeroProbabilityRealization,

    #[error("graph mismatch: {0}")]
    GraphMismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::GuardExceeded { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
