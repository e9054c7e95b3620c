//! Run orchestration for the hybrid-cloud database simulator.
//!
//! A run is described by a JSON [`config::RunConfig`] naming the topology,
//! catalog, placement, workload and optional controller documents. Every run
//! writes its trace, workload, per-template table, summary and a manifest of
//! input and artifact digests into one output directory.

pub mod config;
pub mod report;
pub mod run;

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

pub use config::{load_run, LoadedRun, Mode, RunConfig};
pub use report::{emit_fig2_table, Fig2Row};
pub use run::{execute, RunOutcome};

/// User errors exit with 1, engine invariant violations with 2.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub internal: bool,
}

impl CliError {
    pub fn user(code: &str, message: impl Into<String>) -> Self {
        CliError { code: code.to_owned(), message: message.into(), internal: false }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError { code: "INVARIANT_VIOLATION".into(), message: message.into(), internal: true }
    }

    pub fn exit_code(&self) -> i32 {
        if self.internal {
            2
        } else {
            1
        }
    }

    /// Single-line JSON `{"code": .., "message": ..}`.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain strings serialize")
    }
}

/// Parses `A..B` (end exclusive) or `A..=B`.
pub fn parse_seed_range(text: &str) -> Result<RangeInclusive<u64>, CliError> {
    let bad = || CliError::user("CONFIG_INVALID", format!("bad seed range `{text}`, expected A..B or A..=B"));
    let (a, b, inclusive) = match text.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = text.split_once("..").ok_or_else(bad)?;
            (a, b, false)
        }
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b } else { b.checked_sub(1).ok_or_else(bad)? };
    if a > end {
        return Err(bad());
    }
    Ok(a..=end)
}

/// Runs a config once, with optional seed and output overrides.
pub fn run_config(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    let loaded = load_run(config_path)?;
    let out_dir = out.map_or_else(|| loaded.default_output_dir(), Path::to_path_buf);
    execute(&loaded, loaded.effective_seed(seed), &out_dir)
}

/// Runs every seed in parallel, each into `<out>/seed-<N>`.
pub fn run_seeds(
    config_path: &Path,
    seeds: RangeInclusive<u64>,
    out: Option<&Path>,
) -> Result<Vec<Result<RunOutcome, CliError>>, CliError> {
    let loaded = load_run(config_path)?;
    let root: PathBuf = out.map_or_else(|| loaded.default_output_dir(), Path::to_path_buf);
    Ok(seeds
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| execute(&loaded, seed, &root.join(format!("seed-{seed}"))))
        .collect())
}
