//! Experiment drivers.
//!
//! Every study returns a [`StudyResult`] of typed rows in a deterministic
//! order. Rows serialize to CSV (or TSV) with a fixed column set per row type;
//! the `*_COLUMNS` constants document each schema.

mod conflict;
mod e2e;
mod sweeps;
mod trace;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use conflict::{
    conflict_study, coverage_budget, ConflictMethod, ConflictRow, ConflictWorkload, EvaEpilogue,
    CONFLICT_COLUMNS,
};
pub use e2e::{
    run_e2e, Accelerator, E2eMode, E2eRow, ModelSpec, E2E_COLUMNS,
};
pub use sweeps::{
    batch_sweep, dse_eu_sweep, BatchSweepRow, BatchSweepSeries, EuSweepRow, BATCH_SWEEP_COLUMNS,
    EU_SWEEP_COLUMNS,
};
pub use trace::{
    ingest_trace, parse_trace, synthetic_trace, write_trace_csv, Dataset, Request, RequestTrace,
    TraceSummary,
};

/// Column layout version written alongside CSV outputs.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Tsv,
}

impl OutputFormat {
    pub fn delimiter(&self) -> u8 {
        match self {
            OutputFormat::Csv => b',',
            OutputFormat::Tsv => b'\t',
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Tsv => "tsv",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "tsv" => Ok(OutputFormat::Tsv),
            other => Err(Error::config(format!("unknown output format `{other}`"))),
        }
    }
}

/// Rows produced by one study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult<R> {
    pub id: String,
    pub rows: Vec<R>,
}

impl<R: Serialize> StudyResult<R> {
    pub fn new(id: impl Into<String>, rows: Vec<R>) -> Self {
        Self { id: id.into(), rows }
    }

    pub fn to_delimited(&self, format: OutputFormat) -> Result<String> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(format.delimiter())
            .from_writer(Vec::new());
        for row in &self.rows {
            wtr.serialize(row).map_err(csv_error)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// Writes `<dir>/<id>_<config_hash>.<ext>` and returns the path.
    pub fn write(&self, dir: &Path, config_hash: &str, format: OutputFormat) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_{}.{}", self.id, config_hash, format.extension()));
        fs::write(&path, self.to_delimited(format)?)?;
        Ok(path)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Short stable digest of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| Error::config(e.to_string()))?;
    let digest = Sha256::digest(&json);
    Ok(hex::encode(&digest[..6]))
}

/// Nearest-rank percentile of an ascending slice.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
