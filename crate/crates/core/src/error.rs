use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid dosage {value} at row {row}, column {col}")]
    InvalidDosage { row: usize, col: usize, value: String },
    #[error("invalid phenotype {value} at row {row}: expected 0 or 1")]
    InvalidPhenotype { row: usize, value: String },
    #[error("missing or non-finite value in {field} at row {row}")]
    NonFinite { field: &'static str, row: usize },
    #[error("missing genotype at row {row}, column {col} (enable imputation to fill with the SNP mean)")]
    MissingGenotype { row: usize, col: usize },
    #[error("outcome has a single class; both cases and controls are required")]
    SingleClass,
    #[error("invalid covariate matrix: {0}")]
    Covariates(String),
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(String),
    #[error("perfect separation: fitted probabilities reached 0 or 1")]
    Separation,
    #[error("null model did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("weights are undefined: {0}; use unweighted mode")]
    UndefinedWeights(String),
    #[error("degenerate null distribution: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, surfaced by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::InvalidDosage { .. } => "E_INVALID_DOSAGE",
            Error::InvalidPhenotype { .. } => "E_INVALID_PHENOTYPE",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::MissingGenotype { .. } => "E_MISSING_GENOTYPE",
            Error::SingleClass => "E_SINGLE_CLASS",
            Error::Covariates(_) => "E_COVARIATES",
            Error::Parse { .. } => "E_PARSE",
            Error::RankDeficient(_) => "E_RANK_DEFICIENT",
            Error::Separation => "E_SEPARATION",
            Error::NotConverged { .. } => "E_NOT_CONVERGED",
            Error::UndefinedWeights(_) => "E_UNDEFINED_WEIGHTS",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::InvalidArgument(_) => "E_INVALID_ARGUMENT",
            Error::Simulation(_) => "E_SIMULATION",
            Error::Io(_) => "E_IO",
        }
    }
}
