use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("required column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("no valid rows in {0}")]
    NoValidRows(String),
    #[error("duplicate subject id `{0}`")]
    DuplicateId(String),
    #[error("invalid subject `{id}`: {reason}")]
    InvalidSubject { id: String, reason: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("subject `{subject}` is missing covariate `{column}`")]
    MissingCovariate { subject: String, column: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cohort has no events")]
    NoEvents,
    #[error("variance function is non-positive ({variance}) at CAG {cag}")]
    NonPositiveVariance { cag: u32, variance: f64 },
    #[error("age {age} is beyond the model's support (cumulative probability is 1)")]
    BeyondSupport { age: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("monotone likelihood: coefficient for `{column}` diverged")]
    Separation { column: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("coefficient of Age*CAG is zero, so the CAG offset is undefined")]
    UndefinedOffset,
    #[error("no comparable pairs below tau = {tau}")]
    NoComparablePairs { tau: f64 },
    #[error("censoring survival is zero at tau = {tau}")]
    ZeroCensoringSurvival { tau: f64 },
    #[error("ROC curve undefined at t = {t}: marginal survival is {survival}")]
    UndefinedRoc { t: f64, survival: f64 },
    #[error("all global weights are zero")]
    ZeroWeights,
    #[error("no tau in the grid is evaluable")]
    EmptyGrid,
    #[error("no subject scores above the threshold {threshold}")]
    EmptyEnrollment { threshold: f64 },
    #[error("survival among enrolled subjects is not estimable at t = {t}")]
    NotEstimable { t: f64 },
    #[error("degenerate rates: {0}")]
    DegenerateRates(String),
    #[error("target censoring rate {target} is infeasible: {reason}")]
    InfeasibleCensoring { target: f64, reason: String },
    #[error("every fold failed for model {model}")]
    AllFoldsFailed { model: String },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cannot parse config: {0}")]
    ConfigParse(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config { .. } | ConfigParse(_) | InvalidArgument(_) => ErrorClass::Config,
            Io { .. } | Csv(_) | MissingColumn(_) | NoValidRows(_) | DuplicateId(_)
            | InvalidSubject { .. } | EmptyCohort | MissingCovariate { .. } | NoEvents => {
                ErrorClass::Data
            }
            _ => ErrorClass::Numerical,
        }
    }
}
