use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported kernel order k={0} (only the k=1 Wendland family is available)")]
    UnsupportedKernelOrder(u32),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty point set: {0}")]
    EmptyPointSet(&'static str),

    #[error("kernel matrix numerically singular (jitter {jitter:.3e}); duplicate or near-duplicate nodes?")]
    SingularKernelMatrix { jitter: f64 },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("grid size d={d} is not realizable; nearest realizable values are {below} and {above}")]
    UnrealizableGridSize { d: usize, below: usize, above: usize },

    #[error("degenerate input sampling at cluster {cluster}: rank condition unreachable")]
    DegenerateInputSampling { cluster: usize },

    #[error("invalid cluster {cluster}: ball lies outside the sampling domain")]
    InvalidCluster { cluster: usize },

    #[error("cluster regression degenerate (smallest singular value {sigma_min:.3e})")]
    DegenerateRegression { sigma_min: f64 },

    #[error("model not proportional: PI constraint violated (error {error:.3e} at the origin)")]
    NotProportional { error: f64 },

    #[error("linearized surrogate not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("Lyapunov solve failed: {0}")]
    LyapunovFailed(String),

    #[error("terminal set collapsed: increase beta or data density ({0})")]
    TerminalSetCollapsed(String),

    #[error("initial state infeasible: {constraint} violated by {violation:.3e}")]
    InitialInfeasible { constraint: String, violation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
