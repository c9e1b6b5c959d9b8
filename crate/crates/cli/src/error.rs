use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("{0}")]
    Divergence(String),

    #[error("gradient check failed for {0} combination(s)")]
    GradcheckFailed(usize),
}

impl CliError {
    pub fn config(msg: impl ToString) -> Self {
        Self::Config(msg.to_string())
    }

    /// Process exit status: 1 gradient check failure, 2 configuration,
    /// 3 numeric divergence, 4 I/O or malformed input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::GradcheckFailed(_) => 1,
            Self::Config(_) => 2,
            Self::Divergence(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<hsmargin::Error> for CliError {
    fn from(e: hsmargin::Error) -> Self {
        use hsmargin::Error as E;
        match e {
            E::Divergence { .. } | E::DegenerateRow { .. } | E::DegenerateFeature { .. } => {
                Self::Divergence(e.to_string())
            }
            E::Io(_)
            | E::Format(_)
            | E::ProtocolDegenerate(_)
            | E::EmptySet(_)
            | E::Index { .. } => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
