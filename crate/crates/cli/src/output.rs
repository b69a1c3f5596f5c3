use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("BHMC_GIT_DESCRIBE"), ")");

/// Fixed formatting for every float written to CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(CliError::json(path.display().to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn create(path: PathBuf, header: &[String]) -> Result<Self, CliError> {
        let writer = csv::Writer::from_path(&path).map_err(|source| CliError::Csv {
            path: path.clone(),
            source,
        })?;
        let mut out = Self { path, writer };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|source| CliError::Csv {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(CliError::io(&self.path))
    }
}

#[derive(Serialize)]
pub struct Meta<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'static str,
    pub threads: usize,
    pub wall_seconds: f64,
    pub config: &'a C,
}

impl<'a, C: Serialize> Meta<'a, C> {
    pub fn new(command: &'a str, config: &'a C, wall_seconds: f64) -> Self {
        Self {
            command,
            version: VERSION,
            threads: rayon::current_num_threads(),
            wall_seconds,
            config,
        }
    }
}
