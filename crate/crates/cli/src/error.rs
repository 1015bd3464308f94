use fogplan::data::DataError;
use fogplan::dsvrg::LearnerError;
use fogplan::sweep::SweepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    MissingInput(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::MissingInput(_) => 3,
        }
    }

    pub fn io(what: &str, e: std::io::Error) -> CliError {
        CliError::Runtime(format!("{what}: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::MissingInput(e.to_string()),
            DataError::Parse { .. } | DataError::Malformed(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Data(d) => d.into(),
            SweepError::Cost(_) | SweepError::Invalid(_) => CliError::Validation(e.to_string()),
            SweepError::Learner(LearnerError::InvalidConfig(_) | LearnerError::DimensionMismatch { .. }) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
