//! Experiment orchestration for legcnet: config files, per-seed execution of
//! the dense / LEGCNet / baseline strategies, artifact files, and the report
//! tables.
//!
//! A run directory looks like
//!
//! ```text
//! <root>/<name>-<hash>/
//!     report.json  cells.csv  timing.json  T1.csv ... T4.csv
//!     seed-<s>/<strategy>/   params.bin, mask.bin, granger.csv, ...
//! ```
//!
//! Everything except `timing.json` is a pure function of the config hash.

pub mod config;
pub mod report;
pub mod run;
pub mod stages;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentConfig, LoadedConfig, StrategyName};
pub use report::{report_table, CellMetrics, CellOutcome, CellReport, RunReport, TableId};
pub use run::{run, RunOutcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing report rows:\n  {}", .0.join("\n  "))]
    MissingRows(Vec<String>),
    #[error(transparent)]
    Core(#[from] legcnet::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    legcnet::nnet::NnetError,
    legcnet::data::DataError,
    legcnet::trajectory::TrajectoryError,
    legcnet::chaos::ChaosError,
    legcnet::causality::CausalityError,
    legcnet::pruning::PruningError,
    legcnet::diagnostics::DiagnosticsError
);

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), CliError> {
    let path = path.as_ref();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
