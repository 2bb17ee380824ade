use thiserror::Error;

/// Which hard region a state violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// Index into the barrier's ball obstacle list.
    Ball(usize),
    /// Index into the barrier's collision pair list.
    Pair(usize),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Ball(i) => write!(f, "obstacle {i}"),
            Violation::Pair(i) => write!(f, "collision pair {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("metric is numerically singular (condition estimate {condition:e})")]
    SingularMetric { condition: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("constraint rank changed: expected {expected}, detected {found}")]
    RankDrop { expected: usize, found: usize },

    #[error("state is inside {violation}")]
    InsideObstacle { violation: Violation },

    #[error("flow step collapsed to {step:e} at s = {s}")]
    StepCollapse { s: f64, step: f64 },

    #[error("non-finite value at node {node} (s = {s})")]
    NonFinite { node: usize, s: f64 },

    #[error("curve length increased by {increase:e} at s = {s}")]
    LengthIncrease { s: f64, increase: f64 },

    #[error("sketch endpoint {which} does not match the requested boundary state")]
    EndpointMismatch { which: &'static str },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
