//! Numerical conventions shared by every module.
//!
//! # Jacobian normalization
//!
//! A path functional `v` with Lebesgue density `v̇(t_i)` has its Sobolev
//! derivative stored as the `n × n` matrix
//!
//! ```text
//! M[i][j] = ∂v̇(t_i)/∂ΔW_j · dt
//! ```
//!
//! so that the action on a Cameron–Martin direction `h` is
//! `(∇v · h)(t_i) = Σ_j M[i][j] · ḣ(t_j)`: perturbing the path by `h` moves
//! the increment `ΔW_j` by `ḣ(t_j)·dt`. With this choice the operator and
//! Hilbert–Schmidt norms of `∇v` on `H` are the plain matrix 2-norm and
//! Frobenius norm of `M` (the uniform `dt` weight of the `H` inner product
//! cancels), and the discrete trace used by the divergence is `Σ_i M[i][i]`.

/// Central finite-difference step on an increment is `FD_STEP_SCALE · √dt`.
pub const FD_STEP_SCALE: f64 = 1e-5;

/// Default λ-step for the trapezoidal integral of the density exponent.
pub const LAMBDA_QUADRATURE_STEP: f64 = 1.0 / 64.0;

/// λ-step for central first differences.
pub const FD_FIRST_STEP: f64 = 1.0 / 16.0;

/// λ-step for central second differences.
pub const FD_SECOND_STEP: f64 = 1.0 / 8.0;

/// Paths per jackknife block.
pub const JACKKNIFE_BLOCK: usize = 64;

/// Systematic resampling fires when `ess < RESAMPLE_FRACTION · N`.
pub const RESAMPLE_FRACTION: f64 = 0.5;

/// A particle filter whose effective sample size drops below this is flagged.
pub const COLLAPSE_ESS: f64 = 10.0;

/// Log-weights further than this below the running maximum underflow `exp`.
pub const LOG_UNDERFLOW: f64 = -745.0;

pub const POWER_ITERATION_MAX: usize = 500;
pub const POWER_ITERATION_TOL: f64 = 1e-12;

/// Analytic Jacobians of adapted drifts must have `max |M[i][j]|, j ≥ i` below this.
pub const QUASI_NILPOTENT_TOL_ANALYTIC: f64 = 1e-8;
/// Same bound for finite-difference Jacobians.
pub const QUASI_NILPOTENT_TOL_FD: f64 = 1e-5;

/// Inverse-shift solve is declared divergent once `|V| exceeds this.
pub const INVERSION_BLOWUP: f64 = 1e6;

/// Absolute floor added to "within k standard errors" checks so that
/// zero-variance estimators compare equal up to rounding.
pub const ZERO_VARIANCE_FLOOR: f64 = 1e-12;

/// Ensemble members whose relative log-weight falls below this are skipped
/// when averaging; `e^-60` is far below double-precision resolution of the sum.
pub const WEIGHT_CUTOFF: f64 = -60.0;
