use std::process::ExitCode;

/// Failure category; each maps to its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<icpch::Error> for CliError {
    fn from(e: icpch::Error) -> Self {
        use icpch::Error as E;
        match e {
            E::Parse { .. } | E::Io(_) | E::Csv(_) | E::Json(_) | E::InvalidInput(_) | E::Dimension { .. } => {
                CliError::Data(e.to_string())
            }
            E::DegenerateInterval { .. }
            | E::Divergence
            | E::NotPositiveDefinite { .. }
            | E::SingularSchur
            | E::SingularHessian(_)
            | E::TooManyFailures { .. }
            | E::PathFailed => CliError::Numerical(e.to_string()),
        }
    }
}
