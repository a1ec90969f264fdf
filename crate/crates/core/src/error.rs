use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group spec: {0}")]
    InvalidGroup(String),

    #[error("radius {radius} exceeds the configured maximum {max}")]
    RadiusTooLarge { radius: usize, max: usize },

    #[error("ball of radius {radius} exceeds the vertex budget {budget}")]
    BallTooLarge { radius: usize, budget: usize },

    #[error("normal form undecidable at budget: {0}")]
    UndecidableAtBudget(String),

    #[error("invalid permutation action: {0}")]
    InvalidHom(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dense state space {states} exceeds budget {budget}")]
    DenseBudget { states: u128, budget: usize },

    #[error("pattern support {atoms} exceeds transport budget {budget}")]
    TransportBudget { atoms: usize, budget: usize },

    #[error("radius mismatch: {0} vs {1}")]
    RadiusMismatch(usize, usize),

    #[error("integration step too large: probability {value:e} at t={time}; reduce dt")]
    StepTooLarge { value: f64, time: f64 },

    #[error("state lacks full support (ζ{{{index}}} = 0); evolve for t > 0 first")]
    NotFullSupport { index: usize },

    #[error("F0 is undefined for negative argument {0}")]
    NegativeArgument(f64),

    #[error("no good vertices at radius {0}")]
    NoGoodVertices(usize),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
