use std::fmt;

/// Failure of a subcommand, carrying its exit-code class.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad input: config, spec, arguments. Exit code 1.
    Validation(String),
    /// The work itself failed: I/O, engine errors. Exit code 2.
    Runtime(String),
    /// Some batch cells failed; the rest completed. Exit code 3.
    PartialBatch { failed: Vec<String> },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::PartialBatch { .. } => 3,
        }
    }

    /// Prefixes the message with `what`.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{what}: {m}")),
            p => p,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::PartialBatch { failed } => {
                write!(f, "{} run(s) failed: {}", failed.len(), failed.join(", "))
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
