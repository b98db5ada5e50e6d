//! Files, data preparation, experiments and the command line around
//! [`mag_core`].
//!
//! - [`table`]: loading the source CSVs, date alignment and gap filling.
//! - [`groups`]: statistics column groups and leave-one-out removal.
//! - [`windows`]: windowing, the chronological split and normalization.
//! - [`config`]: the run configuration file and its echo.
//! - [`artifacts`]: the parameter file and CSV reports.
//! - [`experiments`]: parallel grid search and the ablation study.
//! - [`commands`]: the CLI commands.
//! - [`fixture`], [`selftest`]: synthetic inputs and built-in checks.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fixture;
pub mod groups;
pub mod selftest;
pub mod table;
pub mod windows;

pub use error::{AppError, Result};
