use std::fmt;

use bpca_core::BpcaError;

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input: config, schema, data shape.
    Schema(String),
    /// The numerics failed on valid input.
    Numerical(String),
    /// A randomized property suite found a counterexample.
    Property(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Property(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical abort: {m}"),
            CliError::Property(m) => write!(f, "property suite failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<BpcaError> for CliError {
    fn from(e: BpcaError) -> Self {
        match e {
            BpcaError::Io(io) => CliError::Io(io.to_string()),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Schema(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
