use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("time grid needs at least one step")]
    EmptyGrid,

    #[error("drift at step {step} needs {needed} history increments, got {available}")]
    InsufficientHistory {
        step: usize,
        needed: usize,
        available: usize,
    },

    #[error("unsupported lambda-derivative order {0} (expected 1 or 2)")]
    UnsupportedOrder(u8),

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("model `{0}` is not observation-form; conditional laws are only available for drifts driven by (m, U)")]
    NotObservationForm(&'static str),

    #[error("quadrature engine does not support law `{0}`")]
    UnsupportedLaw(&'static str),

    #[error("particle weights collapsed (ess {ess:.2} at step {step}); raise the particle count")]
    WeightCollapse { ess: f64, step: usize },

    #[error("I + M is singular")]
    SingularResolvent,

    #[error("matrix is not strictly lower triangular (defect {0:e})")]
    NotQuasiNilpotent(f64),

    #[error("power iteration did not converge after {0} iterations")]
    PowerIterationDiverged(usize),

    #[error("initial drift u_0 is non-zero and no closed-form L_0 is available")]
    NonZeroInitialDrift,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
