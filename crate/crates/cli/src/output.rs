//! CSV artifacts and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

/// Float with 12 significant digits, printed in shortest form.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::F)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(x) => x.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }
}

/// An in-memory table written once at the end of a run.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(CliError::io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(CliError::io)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a run writes.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    /// Extra text files (verification reports).
    pub texts: Vec<(String, String)>,
}

impl Artifacts {
    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }
}

/// Write the artifacts and `manifest.json` into `dir`.
pub fn write_all(
    dir: &Path,
    command: &str,
    config_text: &str,
    seed: u64,
    artifacts: &Artifacts,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(CliError::io)?;
    let mut files = Vec::new();
    let mut written = Vec::new();
    for t in &artifacts.tables {
        let bytes = t.to_csv()?;
        let name = format!("{}.csv", t.name);
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(CliError::io)?;
        files.push(serde_json::json!({
            "name": name,
            "columns": t.header,
            "rows": t.rows.len(),
            "sha256": sha256_hex(&bytes),
        }));
        written.push(path);
    }
    for (name, text) in &artifacts.texts {
        let path = dir.join(name);
        fs::write(&path, text).map_err(CliError::io)?;
        files.push(serde_json::json!({
            "name": name,
            "sha256": sha256_hex(text.as_bytes()),
        }));
        written.push(path);
    }
    let manifest = serde_json::json!({
        "command": command,
        "schema_version": crate::config::SCHEMA_VERSION,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "seed": seed,
        "versions": {
            "adx-cli": env!("CARGO_PKG_VERSION"),
            "adx-core": adx::VERSION,
        },
        "files": files,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let path = dir.join("manifest.json");
    fs::write(&path, text + "\n").map_err(CliError::io)?;
    written.push(path);
    Ok(written)
}
