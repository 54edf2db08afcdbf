use std::fmt;
use std::path::Path;

use hypocart::cgm::CgmError;
use hypocart::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Validation,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Validation => 2,
            Kind::Internal => 3,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Validation => "validation",
            Kind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
    pub line: Option<u64>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: Kind::Usage, message: message.into(), line: None }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: Kind::Validation, message: message.into(), line: None }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self { kind: Kind::Internal, message: message.to_string(), line: None }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::validation(format!("{}: {err}", path.display()))
    }

    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// One-line diagnostic in `key=value` form.
    pub fn diagnostic(&self) -> String {
        let mut out = format!("error kind={} exit={}", self.kind.as_str(), self.kind.exit_code());
        if let Some(line) = self.line {
            out.push_str(&format!(" line={line}"));
        }
        let msg = self.message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        out.push_str(&format!(" message=\"{msg}\""));
        out
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let line = match &e {
            Error::Cgm(c) => c.line(),
            _ => None,
        };
        let kind = if e.is_validation() { Kind::Validation } else { Kind::Internal };
        Self { kind, message: e.to_string(), line }
    }
}

impl From<CgmError> for CliError {
    fn from(e: CgmError) -> Self {
        Error::from(e).into()
    }
}
