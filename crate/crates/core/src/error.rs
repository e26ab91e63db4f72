use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("SVD did not converge")]
    SvdNoConvergence,

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not Hermitian positive definite")]
    NotPositiveDefinite,

    #[error("noise covariance is singular: combiner has rank below the stream count")]
    SingularNoiseCovariance,

    #[error("target matrix has zero Frobenius norm")]
    ZeroTarget,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{failed} of {total} trial evaluations failed (limit 1%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Dimension(_) => "dimension",
            Error::NonFinite => "non_finite",
            Error::SvdNoConvergence => "svd_no_convergence",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::SingularNoiseCovariance => "singular_noise_covariance",
            Error::ZeroTarget => "zero_target",
            Error::Config { .. } => "config",
            Error::ConfigParse(_) => "config_parse",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Io { .. } => "io",
        }
    }
}
