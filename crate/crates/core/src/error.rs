// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Named error classes. The workbench maps each class to an exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("template error: {0}")]
    Template(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("hook contract violated at layer {layer}, step {step}: expected dimension {expected}, got {got}")]
    HookContract {
        layer: usize,
        step: usize,
        expected: usize,
        got: usize,
    },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("degenerate probe: {0}")]
    DegenerateProbe(String),

    #[error("unsupported probe family: {0}")]
    UnsupportedFamily(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("judge error: {0}")]
    Judge(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corruption: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the error class, used in CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Template(_) => "template",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Input(_) => "input",
            Error::Spec(_) => "spec",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::HookContract { .. } => "hook-contract",
            Error::DegenerateLabels(_) => "degenerate-labels",
            Error::Convergence { .. } => "convergence",
            Error::DegenerateProbe(_) => "degenerate-probe",
            Error::UnsupportedFamily(_) => "unsupported-family",
            Error::Pairing(_) => "pairing",
            Error::Judge(_) => "judge",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
