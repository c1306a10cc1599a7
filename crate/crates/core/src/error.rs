use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("invalid coefficients: {0}")]
    Coefficients(String),
    #[error("singular system matrix (zero pivot at row {0})")]
    Singular(usize),
    #[error("negative boundary value {value} at node {node}")]
    NegativeControl { node: usize, value: f64 },
    #[error("invalid time grid: {0}")]
    TimeGrid(String),
    #[error("observation node {0} out of range")]
    ObservationIndex(usize),
    #[error("subdivision not aligned with mesh: {0}")]
    Misaligned(String),
    #[error("invalid subdivision: {0}")]
    Subdivision(String),
    #[error("snapshot collection: {0}")]
    Snapshots(String),
    #[error("time window: {0}")]
    Window(String),
    #[error("invalid 1d problem: {0}")]
    Ode(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
