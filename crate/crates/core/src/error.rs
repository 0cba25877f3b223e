use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("softmax row {row} has every position masked")]
    AllMasked { row: usize },

    #[error("masked mean over zero available rows")]
    EmptyPool,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate column `{0}`: zero variance over available training cells")]
    DegenerateColumn(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("undefined metric: no acceptable pairs")]
    UndefinedMetric,

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("{features} available features exceed the exact-enumeration limit of {limit}; use a sampling estimator")]
    Complexity { features: usize, limit: usize },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
