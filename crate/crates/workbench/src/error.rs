// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WorkbenchError>;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Core(#[from] steerprobe::Error),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WorkbenchError {
    pub fn class(&self) -> &'static str {
        match self {
            WorkbenchError::Core(e) => e.class(),
            WorkbenchError::Usage(_) => "usage",
            WorkbenchError::Config(_) | WorkbenchError::Toml(_) => "config",
            WorkbenchError::Csv(_) => "csv",
            WorkbenchError::Io(_) => "io",
            WorkbenchError::Json(_) => "json",
        }
    }

    /// 2 for caller mistakes (usage, config, out-of-domain values), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "usage" | "config" | "domain" | "spec" | "template" => 2,
            _ => 1,
        }
    }
}

impl From<tempfile::PersistError> for WorkbenchError {
    fn from(e: tempfile::PersistError) -> Self {
        WorkbenchError::Io(e.error)
    }
}
