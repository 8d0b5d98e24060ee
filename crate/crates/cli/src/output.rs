//! Delimited text and JSON-lines writers.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use dclust_core::training::MetricsRecord;
use dclust_core::Matrix;

use crate::error::CliResult;

/// Shortest round-trip text for a float; scientific outside the comfortable range.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `header` then one line per row, optionally followed by a label column.
pub fn write_matrix_csv(
    path: &Path,
    header: &[String],
    m: &Matrix,
    labels: Option<&[usize]>,
) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut head = header.join(",");
    if labels.is_some() {
        head.push_str(",label");
    }
    writeln!(w, "{head}")?;
    for (r, row) in m.iter_rows().enumerate() {
        let mut line = row.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",");
        if let Some(l) = labels {
            line.push(',');
            line.push_str(&l[r].to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_column(path: &Path, header: &str, values: &[usize]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Line-delimited JSON metrics.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, append: bool) -> CliResult<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = if append {
            OpenOptions::new().create(true).append(true).open(path)?
        } else {
            File::create(path)?
        };
        Ok(MetricsWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> dclust_core::Result<()> {
        let line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, 1.0, -0.5, 1e-7, 123456.789, 3.0e20, f64::MIN_POSITIVE, 0.1 + 0.2] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }
}
