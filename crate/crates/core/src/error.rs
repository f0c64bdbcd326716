//! Error type shared by every module of the solver.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell {cell}: degenerate state (rho = {rho:.6e}, T = {temperature:.6e})")]
    DegenerateState {
        cell: usize,
        rho: f64,
        temperature: f64,
    },

    #[error("{what} must be positive (got {value:.6e})")]
    NonPositive { what: &'static str, value: f64 },

    #[error("step {step} (t = {time:.6e}) failed in {stage}: {detail}")]
    StepFailure {
        stage: &'static str,
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("particle {particle} moved more than one domain length in one step (x = {x:.6e}); reduce dt")]
    TimeStepTooLarge { particle: usize, x: f64 },

    #[error("cell {cell} contains no particles")]
    EmptyCell { cell: usize },

    #[error("field has {got} entries but the grid has {expected} cells")]
    GridMismatch { expected: usize, got: usize },

    #[error("unknown scenario '{name}'; available: {available}")]
    UnknownScenario { name: String, available: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
