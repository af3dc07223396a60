//! Results table: `experiment,method,snr_db,se_mean,se_std,n`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::eval::{Method, SeStats};

pub const RESULTS_HEADER: [&str; 6] = ["experiment", "method", "snr_db", "se_mean", "se_std", "n"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: Method,
    pub snr_db: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub n: usize,
}

impl ResultRow {
    pub fn from_stats(experiment: &str, s: &SeStats) -> Self {
        Self {
            experiment: experiment.to_string(),
            method: s.method,
            snr_db: s.snr_db,
            se_mean: s.se_mean,
            se_std: s.se_std,
            n: s.n,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ResultsError {
    #[error("results file has no rows")]
    Empty,
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>, ResultsError> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(ResultsError::Header {
            found: header,
            expected: RESULTS_HEADER.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.deserialize::<ResultRow>().enumerate() {
        let row: ResultRow = rec.map_err(|e| ResultsError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        if row.n == 0 || !row.snr_db.is_finite() || !row.se_mean.is_finite() || !row.se_std.is_finite() {
            return Err(ResultsError::Row {
                row: i + 1,
                message: "non-finite value or zero sample count".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ResultsError::Empty);
    }
    Ok(rows)
}
