use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::Summary;
use crate::{file_error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "cell_id",
    "rule",
    "sampler",
    "env",
    "sweep_value",
    "seed",
    "cum_cost",
    "smoothness",
    "step_ms_mean",
    "step_ms_std",
    "truncated",
];

/// Metrics of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cell_id: String,
    pub rule: String,
    pub sampler: String,
    pub env: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub cum_cost: f64,
    pub smoothness: f64,
    pub step_ms_mean: f64,
    pub step_ms_std: f64,
    pub truncated: bool,
}

impl ExperimentRecord {
    pub(crate) fn csv_row(&self) -> [String; 11] {
        let f = |v: f64| format!("{v:.16e}");
        [
            self.cell_id.clone(),
            self.rule.clone(),
            self.sampler.clone(),
            self.env.clone(),
            f(self.sweep_value),
            self.seed.to_string(),
            f(self.cum_cost),
            f(self.smoothness),
            f(self.step_ms_mean),
            f(self.step_ms_std),
            self.truncated.to_string(),
        ]
    }
}

/// Writer that appends records as they arrive.
pub struct RecordWriter {
    inner: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
        }
        let mut inner = csv::Writer::from_path(path).map_err(|e| file_error(path, e))?;
        inner
            .write_record(CSV_HEADER)
            .map_err(|e| file_error(path, e))?;
        inner.flush().map_err(|e| file_error(path, e))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, record: &ExperimentRecord) -> Result<()> {
        self.inner
            .write_record(record.csv_row())
            .and_then(|_| self.inner.flush().map_err(csv::Error::from))
            .map_err(|e| file_error(&self.path, e))
    }
}

/// Writes all records, floats with 17 significant digits.
pub fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| file_error(path, e))?;
    let header = reader.headers().map_err(|e| file_error(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(file_error(path, "unexpected CSV header"));
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ExperimentRecord>, _>>()
        .map_err(|e| file_error(path, e))
}

/// Writes `cell → summary` as pretty JSON.
pub fn write_summaries(summaries: &BTreeMap<String, Summary>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    }
    let text = serde_json::to_string_pretty(summaries).map_err(|e| file_error(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| file_error(path, e))
}
