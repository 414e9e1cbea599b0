use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("level sets live on different grids")]
    GridMismatch,

    #[error("offset {offset} is not inside the narrow band (half-width {band})")]
    BandTooThin { offset: f64, band: f64 },

    #[error("shape is empty: no zero crossing inside the narrow band")]
    EmptyShape,

    #[error("non-finite speed value at node {0}")]
    NonFiniteSpeed(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("heat solve: {0}")]
    Heat(String),

    #[error(
        "structure is not constrained: component of {cells} active cells spanning \
         [{min:?} .. {max:?}] touches no fixed patch"
    )]
    FloatingComponent { cells: usize, min: [f64; 3], max: [f64; 3] },

    #[error("load case {0} has no fixed node inside the active structure")]
    NoFixedNodes(usize),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:.3e})")]
    SolverStalled { iterations: usize, residual: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
