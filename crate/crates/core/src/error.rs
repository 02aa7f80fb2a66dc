use thiserror::Error;

/// Errors raised by model construction, analysis and verification.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph must have at least one vertex")]
    EmptyGraph,
    #[error("edge ({0}, {1}) references a vertex outside 1..={2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("vertex {0} has no in-neighbour")]
    ZeroInDegree(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("memory matrix invariant violated: {0}")]
    InvariantViolation(String),
    #[error("step probability {prob} for elephant {elephant} at time {n} is outside [0, 1]")]
    ProbabilityOutOfRange { elephant: usize, n: usize, prob: f64 },
    #[error("memory matrix is not diagonalisable (numerically)")]
    NotDiagonalizable,
    #[error("memory matrix is not diagonalisable over the reals")]
    NotRealDiagonalizable,
    #[error("walk is not in the diffusive regime (eta = {0})")]
    NotDiffusive(f64),
    #[error("walk is not in the critical regime (eta = {0})")]
    NotCritical(f64),
    #[error("walk has no super-diffusive projection (eta = {0})")]
    NotSuperdiffusive(f64),
    #[error("no projection with real part <= 1/2")]
    NoSubCriticalProjections,
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("state space too large for enumeration: {0}")]
    TooLarge(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("all memory parameters must equal 1")]
    MemoryNotOne,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
