use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse problem file: {0}")]
    Parse(String),

    #[error("missing required field `{0}`")]
    MissingField(String),

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("problem failed validation: {0}")]
    Invalid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `R_k + λ R̃_k + Bᵀ X_{k+1} B` is not positive definite.
    #[error("inner block at step {step} is not positive definite for lambda = {lambda} (smallest eigenvalue {min_eig:e})")]
    InnerBlockNotPD {
        step: usize,
        lambda: f64,
        min_eig: f64,
    },

    #[error("no lambda with f(lambda) < 0 found up to {lambda_bar} after {doublings} doublings (f = {f_value:e}); constraint level may be infeasible")]
    BracketFailure {
        lambda_bar: f64,
        f_value: f64,
        doublings: u32,
    },

    #[error("cannot factor covariance `{which}`: smallest eigenvalue {min_eig:e} is negative")]
    FactorizationFailure { which: &'static str, min_eig: f64 },

    #[error("at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips any `AtLambda` annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLambda { source, .. } => source.root(),
            other => other,
        }
    }
}
