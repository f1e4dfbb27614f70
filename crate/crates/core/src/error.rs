use thiserror::Error;

/// Errors raised by the trust-region MPC library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("covariance is not positive definite after jitter")]
    NotPositiveDefinite,

    /// Every row of the batch carries an infinite cost.
    #[error("degenerate batch: no row has a finite cost")]
    DegenerateBatch,

    #[error("degenerate elite mass: effective sample size {ess:.3} < 1.5")]
    DegenerateEliteMass { ess: f64 },

    #[error("sample set holds {stored} points but {requested} were requested")]
    LcdSizeMismatch { stored: usize, requested: usize },

    #[error(
        "dimension {dim} is outside the supported range 1..={max} of the {generator} generator"
    )]
    UnsupportedDimension {
        generator: &'static str,
        dim: usize,
        max: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
