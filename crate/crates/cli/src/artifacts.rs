use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Overrides the root that relative `--out` paths resolve against.
pub const OUT_ROOT_VAR: &str = "LAE_OUT_ROOT";

/// Bumped whenever a CSV layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_owned(),
    }
}

/// Shortest round-trip form, scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        std::fs::create_dir_all(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(RunDir { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn subdir(&self, name: &str) -> Result<RunDir> {
        RunDir::create(self.path.join(name))
    }

    pub fn write_config(&self, config: &ExperimentConfig) -> Result<()> {
        self.write_text("config.toml", &config.to_toml())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path.join(name);
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }

    /// Opens `name` and writes the schema comment and header row.
    pub fn csv(&self, name: &str, header: &[&str]) -> Result<CsvOut> {
        let path = self.path.join(name);
        let io = |source| CliError::Io { path: path.clone(), source };
        let mut file = BufWriter::new(File::create(&path).map_err(io)?);
        let stem = name.trim_end_matches(".csv");
        writeln!(file, "# lae {stem} v{SCHEMA_VERSION}").map_err(io)?;
        let mut out = CsvOut { writer: csv::Writer::from_writer(file), path: path.clone() };
        out.row(header.iter().copied())?;
        Ok(out)
    }
}

pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl CsvOut {
    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|source| CliError::Csv { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|source| CliError::Io { path: self.path.clone(), source })
    }
}
