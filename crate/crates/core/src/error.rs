use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies outside the overlap of the two chart domains")]
    OutsideOverlap,
    #[error("point lies outside the chart domain")]
    OutsideDomain,
    #[error("coordinate vector has norm {norm} which is not inside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no sampled point survives both domains of the composition")]
    EmptyOverlap,
    #[error("point is not in the domain of {0}")]
    NotInDomain(String),
    #[error("broken leaf chain: {0}")]
    BrokenChain(String),
    #[error("ball cover is not connected on the sampled points")]
    DisconnectedCover,
    #[error("offset {0} is not spanned by the generator offsets")]
    NotTransitive(String),
    #[error("gradient flow diverged: loss {loss} exceeds ceiling {ceiling}")]
    Diverged { loss: f64, ceiling: f64 },
    #[error("integration budget of {max_time} exhausted with loss {loss} above target {target}")]
    BudgetExhausted { max_time: f64, loss: f64, target: f64 },
    #[error("task already satisfies the accuracy target (loss {loss} < {eps})")]
    AlreadySatisfied { loss: f64, eps: f64 },
    #[error("task coincides with the initial model")]
    DegenerateTask,
    #[error("class {0} has no support examples")]
    EmptyClass(usize),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
