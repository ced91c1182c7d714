use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("load error: {0}")]
    Load(String),
    #[error("recode error: {0}")]
    Recode(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("policy state error: {0}")]
    State(String),
    #[error("policy contract violation: {0}")]
    Contract(String),
    #[error("training-data error: {0}")]
    TrainingData(String),
    #[error("corpus error: missing matching-stance argument for questions {0:?}")]
    Corpus(Vec<String>),
    #[error("generation error (retryable): {0}")]
    Generation(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at step {step}: {reason} (last good checkpoint: {last_good})")]
    Diverged {
        step: usize,
        reason: String,
        last_good: String,
    },
    #[error("metric error: {0}")]
    Metric(String),
    /// Both Welch samples have zero variance. `p_value` is 0 when the means
    /// differ in the claimed direction and 1 otherwise.
    #[error("degenerate test: {reason} (reported p = {p_value})")]
    Degenerate { reason: String, p_value: f64 },
    #[error("rank error: {0}")]
    Rank(String),
    #[error("decomposition error: {0}")]
    Decomposition(String),
    #[error("dimension error: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("report error: {0}")]
    Report(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Validation and configuration problems, as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Load(_)
                | Error::Recode(_)
                | Error::Split(_)
                | Error::Unsupported(_)
                | Error::Mapping(_)
                | Error::Config(_)
                | Error::TrainingData(_)
                | Error::Corpus(_)
                | Error::Dimension { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
