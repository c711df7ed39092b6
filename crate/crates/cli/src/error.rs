//! Error classes and their exit codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid flags, config keys or values (exit 2).
    Config,
    /// A solver failed (exit 3).
    Numerical,
    /// An input file is missing (exit 4).
    MissingInput,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::MissingInput => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Numerical => "numerical",
            ErrorKind::MissingInput => "missing-input",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::MissingInput, message: message.into() }
    }

    /// One line, `error kind=<kind>: <message>`, safe for line-based parsing.
    pub fn line(&self) -> String {
        let msg: String = self.message.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
        format!("error kind={}: {msg}", self.kind.label())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn kind_of(e: &delaycont::Error) -> ErrorKind {
    use delaycont::Error as E;
    match e {
        E::Config(_) | E::Domain(_) | E::Contract(_) | E::Json(_) => ErrorKind::Config,
        E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::MissingInput,
        _ => ErrorKind::Numerical,
    }
}

impl From<delaycont::Error> for CliError {
    fn from(e: delaycont::Error) -> Self {
        Self { kind: kind_of(&e), message: e.to_string() }
    }
}

/// Reads an input file, classifying a missing file as such.
pub fn read_input(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(format!("input file not found: {}", path.display())),
        _ => CliError::missing(format!("cannot read {}: {e}", path.display())),
    })
}

/// Classifies an error chain for the exit code.
pub fn classify(err: &anyhow::Error) -> CliError {
    let kind = err
        .chain()
        .find_map(|cause| {
            if let Some(c) = cause.downcast_ref::<CliError>() {
                Some(c.kind)
            } else if let Some(e) = cause.downcast_ref::<delaycont::Error>() {
                Some(kind_of(e))
            } else if cause.downcast_ref::<serde_json::Error>().is_some() {
                Some(ErrorKind::Config)
            } else {
                None
            }
        })
        .unwrap_or(ErrorKind::Numerical);
    CliError { kind, message: format!("{err:#}") }
}
