//! CSV tables with a `#`-prefixed metadata header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance written at the top of every table.
#[derive(Debug, Clone)]
pub struct Meta {
    pub table: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub grid_m: usize,
    pub extra: Vec<(String, String)>,
}

impl Meta {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("# tool: opoherald {VERSION}"),
            format!("# table: {}", self.table),
            format!("# config_sha256: {}", self.config_hash),
            format!("# seed: {}", self.seed),
            format!("# grid_M: {}", self.grid_m),
        ];
        out.extend(self.extra.iter().map(|(k, v)| format!("# {k}: {v}")));
        out
    }
}

/// Column names carry their unit in brackets, e.g. `t[s]`.
pub fn write_table(path: &Path, meta: &Meta, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    for line in meta.lines() {
        writeln!(out, "{line}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(columns).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// Reads data rows of a table written by [`write_table`], skipping the
/// metadata and the column header.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn num(v: f64) -> String {
    format!("{v:e}")
}
