//! Shared helpers for artifact files: raw little-endian arrays, JSON sidecars
//! and provenance-commented CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Key/value provenance record carried by every written artifact.
pub type Provenance = BTreeMap<String, String>;

#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct IoError {
    pub path: PathBuf,
    pub message: String,
}

impl IoError {
    pub fn new(path: &Path, message: impl ToString) -> Self {
        Self { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::new(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| IoError::new(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write_bytes(path, text.as_bytes())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::new(path, e))
}

pub fn f64_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>, IoError> {
    if bytes.len() != expected * 8 {
        return Err(IoError::new(path, format!("{} bytes, expected {}", bytes.len(), expected * 8)));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn f32_from_le(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>, IoError> {
    if bytes.len() != expected * 4 {
        return Err(IoError::new(path, format!("{} bytes, expected {}", bytes.len(), expected * 4)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    write_text(path, &to_json(value))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| IoError::new(path, e))
}

/// Prefixes a CSV body with one `# key: value` line per provenance entry.
pub fn csv_with_provenance(provenance: &Provenance, body: &str) -> String {
    let mut out: String = provenance.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect();
    out.push_str(body);
    out
}

/// Serializes rows of string fields as CSV.
pub fn csv_string<I, R, F>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = F>,
    F: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Appends `ext` to a stem path (`out/layer` + `bin` gives `out/layer.bin`).
pub fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
