//! Numerical laboratory for the classical capacity of quantum channels with
//! long-term memory of the form `Φ⁽ⁿ⁾(ρ) = Σᵢ γᵢ Φᵢ⊗ⁿ(ρ)`.
//!
//! The crate computes Holevo and maximin product-state capacities, builds and
//! verifies Helstrom branch-discrimination preambles, evaluates typical-subspace
//! probabilities exactly by type-class enumeration, packs explicit maximal codes
//! at small block length, and checks the Fano weak-converse error bound.
//!
//! Modules:
//! - [`matcore`]: dense complex Hermitian linear algebra (eigendecomposition,
//!   tensor products, matrix functions, trace norm, fidelity).
//! - [`channels`]: density matrices, Kraus channels, branch mixtures, entropies
//!   and Holevo quantities.
//! - [`capacity`]: optimizers for the Holevo capacity χ*(Φ) and the maximin
//!   product-state capacity C(Φ) = sup min_i χ_i.
//! - [`discrimination`]: Helstrom two-hypothesis measurements, composite
//!   branch-identification projectors and the discrimination preamble.
//! - [`typicality`]: exact typical-subspace masses and dimensions via
//!   type-class dynamic programming.
//! - [`coding`]: greedy maximal-code packing, code evaluation, and the Fano
//!   weak-converse report.
//! - [`cli`]: configuration, subcommand dispatch and report serialization for
//!   the `qmemcap` binary.

pub mod capacity;
pub mod channels;
pub mod cli;
pub mod coding;
pub(crate) mod comb;
pub mod discrimination;
pub mod matcore;
pub mod typicality;

/// Crate-wide error type. Variants map onto process exit codes via
/// [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not Hermitian: max |A - A^†| entry = {deviation:.3e}")]
    NotHermitian { deviation: f64 },
    #[error("operator is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPositive { min_eigenvalue: f64 },
    #[error("density matrix trace is {trace}, expected 1")]
    NotUnitTrace { trace: f64 },
    #[error("Kraus completeness violated: max |sum K^†K - I| entry = {deviation:.3e}")]
    KrausIncomplete { deviation: f64 },
    #[error("invalid probability vector: {reason}")]
    InvalidProbabilities { reason: String },
    #[error("empty {what}")]
    Empty { what: &'static str },
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error(
        "materialized dimension {requested} exceeds cap {cap}; \
         use the factored/commuting evaluation path where available"
    )]
    SizeLimit { requested: u128, cap: usize },
    #[error("eigensolver failed to converge for dimension {dim}")]
    EigFailed { dim: usize },
    #[error("branches are numerically identical: best probe output fidelity {fidelity}")]
    IdenticalBranches { fidelity: f64 },
    #[error("bound not reached within limit {limit}: best achieved {best}")]
    BoundNotReached { best: f64, limit: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Process exit code taxonomy: 2 input error, 3 numerical failure,
    /// 4 bound not reached, 5 materialization cap exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EigFailed { .. } => 3,
            Error::BoundNotReached { .. } => 4,
            Error::SizeLimit { .. } => 5,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Numerical tolerances used by validation and classification rules.
///
/// All thresholds referenced by the module contracts live here so that the
/// boundary conventions (zero-eigenvalue tie break, typicality window slack,
/// entropy floor) have one authoritative value each.
pub mod tol {
    /// Max accepted |A - A^†| entry when constructing a Hermitian operator.
    pub const HERMITICITY: f64 = 1e-10;
    /// Density matrix trace must equal 1 within this.
    pub const UNIT_TRACE: f64 = 1e-9;
    /// Most negative eigenvalue admitted for a positive semidefinite operator.
    pub const PSD_EIG: f64 = 1e-10;
    /// Max accepted |sum K^†K - I| entry for a Kraus channel.
    pub const KRAUS_COMPLETENESS: f64 = 1e-9;
    /// Probability vectors must sum to 1 within this.
    pub const PROB_SUM: f64 = 1e-12;
    /// Eigenvalues in [-ZERO_EIG, ZERO_EIG) count as non-negative when
    /// splitting positive/negative eigenspaces.
    pub const ZERO_EIG: f64 = 1e-12;
    /// Eigenvalues at or below this are treated as exactly zero in entropies
    /// and logarithms (0·log 0 = 0 convention).
    pub const ENTROPY_FLOOR: f64 = 1e-15;
    /// Eigenvalues of the reference state below this define its null support
    /// in relative-entropy support checks.
    pub const SUPPORT_RHO: f64 = 1e-12;
    /// Max weight the argument state may carry on the reference's null
    /// support before the relative entropy is reported as +infinity.
    pub const SUPPORT_OMEGA: f64 = 1e-10;
    /// Slack toward inclusion on typicality window boundaries.
    pub const WINDOW_SLACK: f64 = 1e-12;
    /// Two branches count as identical when no probe separates their outputs
    /// below fidelity 1 - DISTINCT_BRANCH.
    pub const DISTINCT_BRANCH: f64 = 1e-9;
}
