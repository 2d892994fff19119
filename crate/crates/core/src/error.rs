use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    Dimension {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("dense assembly of dimension {size} exceeds the cap of {cap}")]
    Capacity { size: usize, cap: usize },

    #[error("rank drop in {context}: sigma_k / sigma_1 = {ratio:.3e}")]
    RankDrop { context: &'static str, ratio: f64 },

    #[error("{context}: matrix is not symmetric positive definite")]
    NotPositiveDefinite { context: &'static str },

    #[error("not a critical point: |P(X)[grad f]| = {residual:.3e}, relative {relative:.3e} > {tol:.1e}")]
    NotCritical {
        residual: f64,
        relative: f64,
        tol: f64,
    },

    #[error("{context} is not supported for operator kind `{kind}`")]
    Unsupported {
        context: &'static str,
        kind: &'static str,
    },

    #[error("singular values sigma_k = {sigma_k:.6e} and sigma_k+1 = {sigma_next:.6e} are not separated")]
    GapNotSeparated { sigma_k: f64, sigma_next: f64 },

    #[error("eigensolver failed to converge on a {0}x{0} matrix")]
    Eigensolver(usize),

    #[error("slope fit needs at least {needed} usable points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
