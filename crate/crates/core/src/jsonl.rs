//! Line-delimited JSON helpers shared by every on-disk record format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// A line that failed to parse, kept for error reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Reads every non-blank line, returning parsed values and per-line failures.
pub fn read_lenient<T, F>(path: &Path, mut parse: F) -> Result<(Vec<T>, Vec<LineError>), JsonlError>
where
    F: FnMut(&str) -> Result<T, String>,
{
    let file = File::open(path).map_err(|source| JsonlError::Read { path: path.to_path_buf(), source })?;
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Read { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line) {
            Ok(v) => ok.push(v),
            Err(message) => errors.push(LineError { line: idx + 1, message }),
        }
    }
    Ok((ok, errors))
}

/// Reads every non-blank line; the first malformed line is an error.
pub fn read_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let (records, errors) = read_lenient(path, |line| serde_json::from_str(line).map_err(|e| e.to_string()))?;
    match errors.into_iter().next() {
        Some(LineError { line, message }) => Err(JsonlError::Parse { path: path.to_path_buf(), line, message }),
        None => Ok(records),
    }
}

pub fn write<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), JsonlError> {
    let wrap = |source| JsonlError::Write { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(&record).map_err(|e| wrap(io::Error::other(e)))?;
        out.write_all(line.as_bytes()).map_err(wrap)?;
        out.write_all(b"\n").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

/// Appends one record, creating the file if needed.
pub fn append<T: Serialize>(path: &Path, record: &T) -> Result<(), JsonlError> {
    let wrap = |source| JsonlError::Write { path: path.to_path_buf(), source };
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(wrap)?;
    let mut line = serde_json::to_string(record).map_err(|e| wrap(io::Error::other(e)))?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(wrap)
}
