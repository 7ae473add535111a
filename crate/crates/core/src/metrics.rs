//! Per-step measurements and the long-format CSV they are written to.
//!
//! Header: `run_id,seed,step,metric_name,value`. UTF-8, `\n` line endings,
//! values printed with 17 significant digits (`{:.16e}`), which round-trips
//! every `f64` exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "run_id,seed,step,metric_name,value";

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

impl Row {
    pub fn new(run_id: &str, seed: u64, step: u64, metric: &str, value: f64) -> Self {
        Self {
            run_id: run_id.to_string(),
            seed,
            step,
            metric: metric.to_string(),
            value,
        }
    }
}

/// One meta-step's measurements. Optional fields are omitted from the CSV
/// when absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub loss_train: Option<f64>,
    pub loss_val: Option<f64>,
    pub accuracy: Option<f64>,
    /// The hyperparameter itself when scalar, its norm otherwise.
    pub lambda: Option<f64>,
    pub hypergrad_norm: Option<f64>,
    pub tape_nodes: usize,
    pub stored_bytes: usize,
    pub forwards: usize,
    pub backwards: usize,
    pub wall_ms: Option<f64>,
}

impl MetricsRecord {
    pub fn rows(&self) -> Vec<Row> {
        let fields: [(&str, Option<f64>); 10] = [
            ("loss_train", self.loss_train),
            ("loss_val", self.loss_val),
            ("accuracy", self.accuracy),
            ("lambda", self.lambda),
            ("hypergrad_norm", self.hypergrad_norm),
            ("tape_nodes", Some(self.tape_nodes as f64)),
            ("stored_bytes", Some(self.stored_bytes as f64)),
            ("forwards", Some(self.forwards as f64)),
            ("backwards", Some(self.backwards as f64)),
            ("wall_ms", self.wall_ms),
        ];
        fields
            .into_iter()
            .filter_map(|(name, v)| v.map(|v| Row::new(&self.run_id, self.seed, self.step, name, v)))
            .collect()
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes rows under a header that is emitted exactly once.
pub struct CsvWriter<W: Write> {
    inner: W,
    header_written: bool,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            header_written: false,
        }
    }

    pub fn write_row(&mut self, row: &Row) -> Result<()> {
        if !self.header_written {
            writeln!(self.inner, "{CSV_HEADER}")?;
            self.header_written = true;
        }
        for field in [&row.run_id, &row.metric] {
            if field.contains([',', '\n', '\r']) {
                return Err(Error::InvalidInput {
                    op: "csv",
                    detail: format!("field {field:?} contains a separator"),
                });
            }
        }
        writeln!(
            self.inner,
            "{},{},{},{},{}",
            row.run_id,
            row.seed,
            row.step,
            row.metric,
            format_value(row.value)
        )?;
        Ok(())
    }

    pub fn write_all<'a>(&mut self, rows: impl IntoIterator<Item = &'a Row>) -> Result<()> {
        for r in rows {
            self.write_row(r)?;
        }
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        if !self.header_written {
            writeln!(self.inner, "{CSV_HEADER}")?;
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Parses a CSV written by [`CsvWriter`]. Errors carry the 1-based line number.
pub fn read_rows(reader: impl BufRead) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let row_no = i + 1;
        let bad = |msg: String| Error::Csv { row: row_no, msg };
        if !saw_header {
            if line != CSV_HEADER {
                return Err(bad(format!("expected header {CSV_HEADER:?}, got {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let seed = fields[1].parse().map_err(|e| bad(format!("seed: {e}")))?;
        let step = fields[2].parse().map_err(|e| bad(format!("step: {e}")))?;
        let value = fields[4].parse().map_err(|e| bad(format!("value: {e}")))?;
        if fields[3].is_empty() {
            return Err(bad("empty metric name".into()));
        }
        rows.push(Row::new(fields[0], seed, step, fields[3], value));
    }
    if !saw_header {
        return Err(Error::Csv {
            row: 1,
            msg: "empty file".into(),
        });
    }
    Ok(rows)
}
