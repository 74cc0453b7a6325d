// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment surface for steerprobe: TOML configs, activation dumps, probe
//! stores, reports, plots and the `steerprobe` command-line tool.

pub mod cli;
pub mod config;
pub mod dump;
pub mod error;
mod fsio;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod store;

pub use config::{ExperimentConfig, JudgeKind};
pub use dump::{load_dump, read_manifest, save_dump, DumpManifest};
pub use error::{Result, WorkbenchError};
pub use pipeline::{Experiment, Layout};
pub use report::{emit_report, ReportBundle};
pub use store::{load_probes, save_probes};
