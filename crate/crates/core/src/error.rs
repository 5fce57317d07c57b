use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("record {index} ({name}): {message}")]
    Malformed {
        index: usize,
        name: String,
        message: String,
    },
    #[error("profile file is not a JSON array of records: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("duplicate model name `{0}`")]
    DuplicateName(String),
    #[error("unknown model `{0}`")]
    NotFound(String),
    #[error("observed duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("invalid request context: {field} {message}")]
    InvalidContext {
        field: &'static str,
        message: String,
    },
    #[error("no transfer history and no default network profile")]
    EstimationUnavailable,
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no models to select from")]
    NoModels,
    #[error("eligible set is empty")]
    EmptyEligibleSet,
    #[error("model `{0}` is not in the profile list")]
    UnknownModel(String),
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("comparison needs at least two policies, report has {0}")]
    InsufficientPolicies(usize),
    #[error("policy `{0}` not present in report")]
    MissingPolicy(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
