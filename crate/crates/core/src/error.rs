use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, symmetry or value ranges of an input are wrong.
    #[error("malformed input: {0}")]
    Structural(String),

    /// The requested task geometry cannot be embedded in any Euclidean space.
    #[error("gram matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.6e})")]
    Infeasible { min_eigenvalue: f64 },

    #[error("dimension p = {dim} is smaller than the number of tasks T = {tasks}")]
    Dimension { dim: usize, tasks: usize },

    #[error("memory size {requested} for task {task} exceeds its {available} samples")]
    Capacity {
        task: usize,
        requested: usize,
        available: usize,
    },

    #[error("trajectory holds {got} models but {expected} are required")]
    MissingTrajectory { expected: usize, got: usize },

    #[error("Monte-Carlo estimates need at least 2 trials, got {0}")]
    TooFewTrials(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A CSV file does not follow the sweep column layout.
    #[error("CSV schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
