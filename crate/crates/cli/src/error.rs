use std::fmt;

/// A failed command: exit code plus a machine-readable kind.
#[derive(Debug)]
pub struct CliError {
    /// 1 for internal or numeric failures, 2 for usage or input errors.
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn input(kind: &str, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: kind.to_owned(),
            message: message.into(),
        }
    }

    pub fn internal(kind: &str, message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: kind.to_owned(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({"error": {"kind": self.kind, "message": self.message, "exit_code": self.code}})
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<q2p_core::Error> for CliError {
    fn from(e: q2p_core::Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 1 },
            kind: e.kind().to_owned(),
            message: e.to_string(),
        }
    }
}
