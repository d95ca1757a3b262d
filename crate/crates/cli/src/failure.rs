//! Command failures and their process exit codes.

use std::fmt;

/// Stable exit codes.
pub mod code {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const MANIFEST: u8 = 2;
    pub const OVERWRITE: u8 = 3;
    pub const FINGERPRINT: u8 = 4;
    pub const METRIC: u8 = 5;
}

#[derive(Debug)]
pub enum Failure {
    /// Manifest could not be read or failed validation.
    Manifest(String),
    /// Refused to replace a bank built with another configuration.
    Overwrite(String),
    /// Bank and run configuration disagree.
    Fingerprint(String),
    /// Metrics are undefined for the scored data.
    Metric(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Manifest(_) => code::MANIFEST,
            Failure::Overwrite(_) => code::OVERWRITE,
            Failure::Fingerprint(_) => code::FINGERPRINT,
            Failure::Metric(_) => code::METRIC,
            Failure::Other(_) => code::OTHER,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Manifest(m) => write!(f, "manifest error: {m}"),
            Failure::Overwrite(m) => write!(f, "refusing to overwrite: {m}"),
            Failure::Fingerprint(m) => write!(f, "fingerprint mismatch: {m}"),
            Failure::Metric(m) => write!(f, "metric undefined: {m}"),
            Failure::Other(e) => {
                // library errors already embed their source text
                let mut shown = String::new();
                for cause in e.chain() {
                    let text = cause.to_string();
                    if shown.ends_with(&text) {
                        continue;
                    }
                    if !shown.is_empty() {
                        shown.push_str(": ");
                    }
                    shown.push_str(&text);
                }
                f.write_str(&shown)
            }
        }
    }
}

impl std::error::Error for Failure {}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<lwinnn::Error> for Failure {
    fn from(e: lwinnn::Error) -> Self {
        match e {
            lwinnn::Error::UndefinedMetric(m) => Failure::Metric(m),
            other => Failure::Other(other.into()),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;
