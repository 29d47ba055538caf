use std::fmt;

/// Process exit codes. Stable across releases.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CHECKPOINT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<vnegnn::Error> for CliError {
    fn from(e: vnegnn::Error) -> Self {
        use vnegnn::Error as E;
        let code = match &e {
            E::Io(_) | E::Config(_) | E::Argument(_) => EXIT_INPUT,
            E::Parse(_) | E::EmptyStructure(_) => EXIT_PARSE,
            E::Checkpoint(_) | E::UnknownParameter(_) => EXIT_CHECKPOINT,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}
