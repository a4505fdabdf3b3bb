//! CSV tables with a provenance comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("# simlearn {} config={} seed={}", env!("CARGO_PKG_VERSION"), self.config_hash, self.seed)
    }
}

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path, provenance: &Provenance) -> anyhow::Result<()> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{}", provenance.line())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_comment_then_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(0.1), opt(None)]);
        t.write(&path, &Provenance { config_hash: "abc".into(), seed: 7 }).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let expected = format!("# simlearn {} config=abc seed=7\na,b\n0.1,\n", env!("CARGO_PKG_VERSION"));
        assert_eq!(text, expected);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
