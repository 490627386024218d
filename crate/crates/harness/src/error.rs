use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad or unreadable configuration; exit code 2.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rsbm_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// The experiment ran but could not produce a report.
    #[error("experiment: {0}")]
    Experiment(String),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
