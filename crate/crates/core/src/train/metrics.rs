//! Per-epoch metrics and their CSV form.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,l_c,l_d,src_acc,tgt_acc,disc_acc,eta_p,lambda_d,wall_ms";

/// One row per completed epoch. Accuracies are fractions; `l_c`, `l_d` and
/// `disc_acc` are means over the epoch's batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_d: f64,
    pub src_acc: f64,
    /// NaN when the target set carries no labels.
    pub tgt_acc: f64,
    pub disc_acc: f64,
    pub eta_p: f64,
    pub lambda_d: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    /// CSV row. Floats use the shortest representation that round-trips.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.epoch,
            self.l_c,
            self.l_d,
            self.src_acc,
            self.tgt_acc,
            self.disc_acc,
            self.eta_p,
            self.lambda_d,
            self.wall_ms
        )
    }

    pub(crate) fn from_csv_row(line: &str, lineno: usize, path: &Path) -> Result<Self> {
        let err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {lineno}: {detail}"),
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 9 {
            return Err(err(format!("expected 9 columns, found {}", cols.len())));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| err(format!("column {} is not a number: '{}'", i + 1, cols[i])))
        };
        let u = |i: usize| -> Result<u64> {
            cols[i]
                .parse()
                .map_err(|_| err(format!("column {} is not a count: '{}'", i + 1, cols[i])))
        };
        Ok(Self {
            epoch: u(0)? as usize,
            l_c: f(1)?,
            l_d: f(2)?,
            src_acc: f(3)?,
            tgt_acc: f(4)?,
            disc_acc: f(5)?,
            eta_p: f(6)?,
            lambda_d: f(7)?,
            wall_ms: u(8)?,
        })
    }
}

pub fn write_metrics_header<W: Write>(w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = format!("{METRICS_HEADER}\n");
    for r in records {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    if header.trim() != METRICS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("line 1: expected header '{METRICS_HEADER}'"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::from_csv_row(&line, i + 2, path)?);
    }
    Ok(out)
}
