//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by matrix validation, model fitting, imputation,
/// pooling, rank selection, and the simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Requested PCA rank exceeds what the matrix dimensions support.
    #[error("rank {rank} is too large for a {n}x{p} matrix (maximum usable rank {max})")]
    RankTooLarge {
        rank: usize,
        max: usize,
        n: usize,
        p: usize,
    },

    /// A column has no observed cells (0-based index).
    #[error("column {col} has no observed cells")]
    EmptyColumn { col: usize },

    /// The degrees of freedom of the noise-variance estimator are not positive.
    #[error("noise variance has non-positive degrees of freedom for n={n}, p={p}, rank={rank}")]
    DegenerateDof { n: usize, p: usize, rank: usize },

    /// An iterative algorithm produced a non-finite value.
    #[error("non-finite value produced at iteration {iteration}")]
    NonFinite { iteration: usize },

    /// An input matrix contains a non-finite observed value.
    #[error("non-finite value at row {row}, column {col} (0-based)")]
    NonFiniteInput { row: usize, col: usize },

    /// Fewer rows than an analysis requires.
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },

    /// A column is constant, so a correlation involving it is undefined.
    #[error("column {col} is constant; correlation is undefined")]
    ConstantColumn { col: usize },

    /// A correlation lies outside the open interval (-1, 1).
    #[error("correlation {value} lies outside (-1, 1)")]
    OutOfRange { value: f64 },

    /// The regression design matrix is singular.
    #[error("design matrix is singular")]
    SingularDesign,

    /// Pooled analyses were produced on different scales.
    #[error("analyses to pool use different transforms")]
    MixedTransforms,

    /// Pooling needs at least two analyses.
    #[error("pooling needs at least 2 analyses, found {found}")]
    TooFewImputations { found: usize },

    /// Listwise deletion left fewer complete rows than the analysis needs.
    #[error("need at least {needed} complete rows, found {found}")]
    TooFewCompleteRows { needed: usize, found: usize },

    /// A covariance matrix has no Cholesky factorization.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// Amputation could not avoid emptying a column.
    #[error("amputation failed to keep every column observed after {attempts} attempts")]
    CannotAmpute { attempts: usize },

    /// A configuration value is invalid.
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}

impl Error {
    /// Shorthand for an [`Error::InvalidConfig`].
    pub fn config(reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            reason: reason.into(),
        }
    }
}
