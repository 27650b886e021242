use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("site {site}: Gram matrix is singular or not positive definite")]
    RankDeficient { site: u32 },

    #[error("site {site}: degenerate posterior, residual variance is zero")]
    DegeneratePosterior { site: u32 },

    #[error("numerical failure{}{}: {detail}",
        .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default(),
        .site.map(|s| format!(" (site {s})")).unwrap_or_default())]
    Numerical {
        iteration: Option<usize>,
        site: Option<u32>,
        detail: String,
    },

    #[error("proximal line search failed: step size underflow")]
    LineSearch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("estimator unavailable: {0}")]
    EstimatorUnavailable(String),

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("Monte Carlo resolution too coarse: {0}")]
    Resolution(String),

    #[error("payload schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload buffer: {0}")]
    Truncated(&'static str),

    #[error("payload validation failed: {0}")]
    Validation(String),

    #[error("incomplete round {round}: no response from sites {missing:?}")]
    IncompleteRound { round: u32, missing: Vec<u32> },

    #[error("site {site}: {source}")]
    Site {
        site: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: row {row}: {detail}")]
    Csv {
        path: String,
        row: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(detail: impl Into<String>) -> Self {
        Error::Numerical {
            iteration: None,
            site: None,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_site(self, site: u32) -> Self {
        Error::Site {
            site,
            source: Box::new(self),
        }
    }
}
