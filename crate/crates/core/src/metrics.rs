//! Append-only CSV metrics log.
//!
//! One header line, then one row per evaluation point. Rows are flushed as
//! they are written so a killed run leaves at most one truncated final line;
//! the reader tolerates and drops such a line.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub struct MetricsWriter {
    out: BufWriter<File>,
    n_cols: usize,
}

impl MetricsWriter {
    /// Creates the file and writes the header row.
    pub fn create(path: &Path, columns: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", columns.join(","))?;
        out.flush()?;
        Ok(MetricsWriter { out, n_cols: columns.len() })
    }

    /// Reopens an existing log for appending; the header must match.
    pub fn append(path: &Path, columns: &[&str]) -> Result<Self> {
        let (header, _) = read_rows(path)?;
        if header != columns {
            return Err(Error::ResumeMismatch(format!(
                "metrics header {header:?} does not match expected {columns:?}"
            )));
        }
        let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok(MetricsWriter { out, n_cols: columns.len() })
    }

    pub fn write_row(&mut self, fields: &[f64]) -> Result<()> {
        if fields.len() != self.n_cols {
            return Err(Error::shape("metrics row", self.n_cols, fields.len()));
        }
        let line: Vec<String> = fields.iter().map(|v| format!("{v}")).collect();
        writeln!(self.out, "{}", line.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads header and numeric rows. A final line that is truncated (missing
/// newline, wrong field count, or an unparseable number) is discarded;
/// malformed lines anywhere else are an error.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut raw = String::new();
    File::open(path)?.read_to_string(&mut raw)?;
    let mut lines: Vec<&str> = raw.split('\n').collect();
    let complete_last = raw.ends_with('\n');
    if complete_last {
        lines.pop(); // trailing empty segment after the final newline
    }
    if lines.is_empty() {
        return Err(Error::Other(format!("metrics file {} has no header", path.display())));
    }
    let header: Vec<String> = lines[0].split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines[1..].iter().enumerate() {
        let is_last = i + 1 == lines[1..].len();
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) if row.len() == header.len() => rows.push(row),
            _ if is_last => break, // torn final line from an interrupted run
            _ => {
                return Err(Error::Other(format!(
                    "metrics file {}: malformed row {}: {line:?}",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok((header, rows))
}
