use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: `{value}` is not a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("degenerate channel {channel}: standard deviation {std:e} is too small")]
    DegenerateChannel { channel: String, std: f64 },

    #[error("split error: {0}")]
    Split(String),

    #[error("unstable system: spectral radius {0} >= 1")]
    Unstable(f64),

    #[error("calibration failed for target {target}%nl: {reason} (achieved {achieved:.3}%nl)")]
    Calibration {
        target: f64,
        achieved: f64,
        reason: String,
    },

    #[error("identifiability error: {0}")]
    Identifiability(String),

    #[error("order error: requested order {requested} exceeds detected rank {rank}")]
    Order { requested: usize, rank: usize },

    #[error("invertibility error: state matrix is singular or ill-conditioned (condition number {0:e})")]
    NotInvertible(f64),

    #[error("observability error: reconstructability map has rank {rank} < {n_x}")]
    NotObservable { rank: usize, n_x: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("rollout diverged at step {step}")]
    RolloutDivergence { step: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    TrainingDivergence { epoch: usize, batch: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lag mismatch: n_a = {n_a}, n_b = {n_b}, map window = {n}")]
    LagMismatch { n_a: usize, n_b: usize, n: usize },

    #[error("invalid section start {start}: valid starts are {min}..={max}")]
    Index { start: usize, min: usize, max: usize },

    #[error("degenerate output: standard deviation of the reference output is zero")]
    DegenerateOutput,
}

pub type Result<T> = std::result::Result<T, Error>;
