use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("formula syntax error: {0}")]
    Syntax(String),

    #[error("duplicate formula term `{0}`")]
    DuplicateTerm(String),

    #[error("covariate x{index} referenced but the sample has p = {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("transformed covariates requested but not attached to the sample")]
    MissingTransformed,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {msg}")]
    Consistency { line: usize, msg: String },

    #[error("line {line}: cannot parse field `{field}`: {msg}")]
    Parse { line: usize, field: String, msg: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid formula for this model: {0}")]
    InvalidFormula(String),

    #[error("complete or quasi-complete separation detected")]
    Separation,

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("estimating-equation system is singular")]
    SingularSystem,

    #[error("solver did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },

    #[error("weak instrument: min |tau(1,x) - tau(0,x)| = {min_margin:e} below threshold {threshold:e}")]
    WeakInstrument { min_margin: f64, threshold: f64 },

    #[error("missing nuisance component: {0}")]
    MissingNuisance(&'static str),

    #[error("sandwich bread matrix is singular")]
    SingularBread,

    #[error("{failures} of {total} replicates failed")]
    TooManyFailures { failures: usize, total: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fitting the {component} model failed: {source}")]
    NuisanceFit {
        component: &'static str,
        #[source]
        source: std::sync::Arc<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Syntax(_)
                | Error::DuplicateTerm(_)
                | Error::IndexOutOfRange { .. }
                | Error::MissingTransformed
                | Error::Schema(_)
                | Error::Consistency { .. }
                | Error::Parse { .. }
                | Error::DegenerateSample(_)
                | Error::InvalidFormula(_)
                | Error::MissingNuisance(_)
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Csv(_)
        ) || matches!(self, Error::NuisanceFit { source, .. } if source.is_validation())
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax(_) => "syntax",
            Error::DuplicateTerm(_) => "duplicate_term",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::MissingTransformed => "missing_transformed",
            Error::Schema(_) => "schema",
            Error::Consistency { .. } => "consistency",
            Error::Parse { .. } => "parse",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::InvalidFormula(_) => "invalid_formula",
            Error::Separation => "separation",
            Error::SingularInformation => "singular_information",
            Error::SingularDesign => "singular_design",
            Error::SingularSystem => "singular_system",
            Error::NotConverged { .. } => "not_converged",
            Error::WeakInstrument { .. } => "weak_instrument",
            Error::MissingNuisance(_) => "missing_nuisance",
            Error::SingularBread => "singular_bread",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::AssumptionViolated(_) => "assumption_violated",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NuisanceFit { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
