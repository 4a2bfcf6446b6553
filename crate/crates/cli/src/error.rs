use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} invariant check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Capacity(_) => 4,
            CliError::Io(_) | CliError::Runtime(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

impl From<bose_core::Error> for CliError {
    fn from(e: bose_core::Error) -> Self {
        use bose_core::Error as E;
        match e {
            E::Capacity(m) => CliError::Capacity(m),
            E::UnsupportedMode(_) | E::Domain(_) | E::Shape(_) | E::Potential(_) | E::Merge(_) => {
                CliError::Validation(e.to_string())
            }
            E::DivergentSeries(_) | E::Singular(_) | E::Unreachable(_) | E::RootNotFound(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
