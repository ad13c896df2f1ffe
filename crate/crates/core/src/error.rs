use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("label {label} has no (M1*) witness")]
    NoM1StarWitness { label: usize },

    #[error("tree would have {requested} vertices, cap is {cap}")]
    SizeLimit { requested: u128, cap: usize },

    #[error("{count} label-invariant permutations exceed the cap of {cap}")]
    PermutationLimit { count: u128, cap: usize },

    #[error("no convergence after {max_iter} iterations (residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("energy must lie in the open upper half plane, got Im z = {0}")]
    InvalidZ(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("vertex {vertex} is not contained in a tree of depth {depth}")]
    InsufficientDepth { vertex: usize, depth: usize },

    #[error("value {value} outside of [0, {bound})")]
    OutOfRange { value: f64, bound: f64 },

    #[error("disorder spec does not match model: {0}")]
    SpecModelMismatch(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("interval [{lo}, {hi}] is not inside a band with margin {margin}")]
    DegenerateInterval { lo: f64, hi: f64, margin: f64 },

    #[error("depth {depth} insufficient: pilot deviation {deviation:.3e} > tolerance {tolerance:.3e}")]
    DepthInsufficient {
        depth: usize,
        deviation: f64,
        tolerance: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
