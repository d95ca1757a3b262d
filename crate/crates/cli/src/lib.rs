//! Command-line front end for the `lwinnn` library.
//!
//! The binary exposes `fit`, `score`, `eval`, `ablate` and `heatmap` (plus a
//! `synth` helper that writes a seeded demo dataset). Commands are plain
//! functions here so they can be driven from tests without a subprocess.
//!
//! Exit codes: 0 success, 1 other errors, 2 manifest problems, 3 refused bank
//! overwrite, 4 bank/config fingerprint mismatch, 5 undefined metrics.

pub mod app;
pub mod commands;
pub mod config;
pub mod failure;
pub mod pipeline;

pub use config::RunConfig;
pub use failure::{code, CmdResult, Failure};
