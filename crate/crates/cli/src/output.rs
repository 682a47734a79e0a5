use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// CSV file whose errors carry its path.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            ensure_dir(parent)?;
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut out = CsvOut { path: path.to_path_buf(), writer: csv::Writer::from_writer(BufWriter::new(file)) };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| self.error(e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }

    fn error(&self, e: csv::Error) -> CliError {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(&self.path, io),
            other => CliError::io(&self.path, std::io::Error::other(format!("{other:?}"))),
        }
    }
}

/// Newline-delimited JSON file.
pub struct JsonLines {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            ensure_dir(parent)?;
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(JsonLines { path: path.to_path_buf(), writer: BufWriter::new(file) })
    }

    pub fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value).expect("record serializes");
        writeln!(self.writer, "{line}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn num(x: f64) -> String {
    x.to_string()
}
