use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use sensevar::fsutil::atomic_write_bytes;
use serde::Serialize;

/// Version of every JSON envelope and CSV column layout this binary writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    schema_version: u32,
    tool_version: &'static str,
    command: &'a str,
    config: &'a C,
    result: &'a R,
}

/// Report sink rooted at the output directory. Every file lands atomically.
pub struct Output {
    dir: PathBuf,
    format: Format,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: PathBuf, format: Format) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir, format, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        atomic_write_bytes(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Plain JSON artifact read back by other commands.
    pub fn artifact<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.bytes(name, s.as_bytes())
    }

    /// Report wrapped with the command name and its full configuration.
    pub fn report<C: Serialize, R: Serialize>(
        &mut self,
        stem: &str,
        command: &str,
        config: &C,
        result: &R,
    ) -> Result<()> {
        if self.format == Format::Csv {
            return Ok(());
        }
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            result,
        };
        self.artifact(&format!("{stem}.json"), &env)?;
        Ok(())
    }

    /// CSV table; a `schema_version` column is prepended to every row.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        if self.format == Format::Json {
            return Ok(());
        }
        self.bytes(&format!("{stem}.csv"), &table.to_csv()?)?;
        Ok(())
    }
}

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("schema_version").chain(self.header.iter().copied()))?;
        let v = SCHEMA_VERSION.to_string();
        for row in &self.rows {
            w.write_record(std::iter::once(v.as_str()).chain(row.iter().map(String::as_str)))?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }
}

/// Shortest round-trip decimal; empty for a missing value.
pub fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn f(x: f64) -> String {
    x.to_string()
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
