//! Batch driver for mixed-prior hybrid reconstructions.
//!
//! `mixkry run|compare|fit <config>` and `mixkry gen <preset> --out <dir>`.
//! The library half exists so the commands can be exercised in-process.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{compare, fit, gen, run, CompareReport, FitReport, RunReport};
pub use config::Config;

/// Command failure, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration, missing inputs (exit 2).
    Config(String),
    Core(mixkry::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mixkry::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Core(e) => match e {
                E::Configuration(_)
                | E::Parse(_)
                | E::Io(_)
                | E::Dimension { .. }
                | E::Argument(_)
                | E::ParameterDomain(_)
                | E::Capacity { .. } => 2,
                E::Breakdown { .. } | E::DegenerateData(_) => 3,
                E::SearchFailure(_) | E::DegenerateTrace(_) | E::FitFailure(_) => 4,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mixkry::Error> for CliError {
    fn from(e: mixkry::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}
