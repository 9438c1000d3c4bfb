use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("document `{doc}` is missing covariate `{covariate}`")]
    MissingCovariate { doc: String, covariate: String },

    #[error("covariate `{covariate}` mixes numeric and categorical values (document `{doc}`)")]
    MixedCovariate { doc: String, covariate: String },

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficientDesign(String),

    #[error("rank deficient for requested T: found {found} of {requested} anchors before residuals fell below tolerance")]
    RankDeficientAnchors { requested: usize, found: usize },

    #[error("degenerate anchor `{term}`: its row of the term-document matrix is all zero")]
    DegenerateAnchor { term: String },

    #[error("nnls did not converge after {iterations} iterations (kkt violation {kkt_violation:e})")]
    NnlsNotConverged {
        x: Vec<f64>,
        kkt_violation: f64,
        iterations: usize,
    },

    #[error("nnls failed for row {row}{}: {source}", term.as_ref().map(|t| format!(" (`{t}`)")).unwrap_or_default())]
    NnlsRow {
        row: usize,
        term: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("anchor too sparse for bootstrap: {resampled} of {requested} iterations had to be redrawn")]
    AnchorTooSparse { resampled: usize, requested: usize },

    #[error("topic `{0}` has an all-zero prevalence row")]
    ZeroPrevalenceRow(String),

    #[error("prevalence values on the boundary {{0, 1}} require boundary handling")]
    BoundaryValues,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("simulation cell D={docs}, N_d={words}, replicate {replicate}: {source}")]
    Simulation {
        docs: usize,
        words: usize,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error stems from invalid input rather than a numerical
    /// or I/O failure at runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyVocabulary
                | Error::MissingCovariate { .. }
                | Error::MixedCovariate { .. }
                | Error::DuplicateDocument(_)
                | Error::RankDeficientDesign(_)
                | Error::Dimension(_)
                | Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
