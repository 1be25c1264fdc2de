//! Error types shared across the crate.

use crate::vec::VecD;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Soft-potential kernel evaluated inside the relative-velocity floor.
    #[error("singular point: |u| = {rel_speed:.3e} below floor {floor:.3e} with gamma = {gamma}")]
    SingularPoint {
        rel_speed: f64,
        floor: f64,
        gamma: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Running Monte Carlo estimate keeps growing under sample doubling.
    #[error("integral does not stabilize: ratio {ratio:.3} after {doublings} doublings")]
    NonIntegrable { ratio: f64, doublings: usize },

    /// An evaluator returned NaN; the offending phase point is attached.
    #[error("evaluator returned NaN at t = {time}, point {point:?}")]
    Evaluation { time: f64, point: Vec<VecD> },

    #[error("move at j = {j} is not acceptable: {reason}")]
    MoveNotAcceptable { j: usize, reason: String },

    #[error("echelon reduction did not terminate within {guard} moves")]
    NonTermination { guard: usize },

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    /// Too many samples were dropped at the kernel singularity.
    #[error("degenerate quadrature: {dropped} of {total} samples dropped")]
    DegenerateQuadrature { dropped: usize, total: usize },

    #[error("operation requires a symmetric evaluator")]
    SymmetryRequired,

    #[error("parameter regime violated: {0}")]
    ParameterRegime(String),

    #[error("Picard iteration diverging: delta grew at depths {m1} and {m2}")]
    DivergenceDetected { m1: usize, m2: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
