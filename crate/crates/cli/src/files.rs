//! File helpers. JSON outputs are pretty-printed with a trailing newline
//! and written through a temporary file so a crash never leaves half a file.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use kgh_core::ingest::{read_snapshot_file, write_snapshot_file, IngestError};
use kgh_core::GraphSnapshot;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path, what: &str) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => CliError::config(format!("{what} file {} not found", path.display())),
        _ => CliError::config(format!("cannot read {what} file {}: {e}", path.display())),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = read_text(path, what)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: invalid {what}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::internal(format!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::internal(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn ingest_error(path: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::Io { source, .. } if source.kind() == ErrorKind::NotFound => {
            CliError::config(format!("snapshot {} not found", path.display()))
        }
        IngestError::Io { source, .. } => CliError::internal(format!("{}: {source}", path.display())),
        other => CliError::validation(format!("{}: {other}", path.display())),
    }
}

pub fn load_snapshot(path: &Path) -> CliResult<GraphSnapshot> {
    read_snapshot_file(path).map_err(|e| ingest_error(path, e))
}

pub fn save_snapshot(path: &Path, snapshot: &GraphSnapshot) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))?;
    }
    write_snapshot_file(path, snapshot).map_err(|e| ingest_error(path, e))
}

/// File-name-safe form of a node id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// `paths` expanded: directories contribute their `*.json` files in name
/// order, plain files are kept as given.
pub fn expand_json_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::config(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::config(format!("input {} not found", p.display())));
        }
    }
    Ok(out)
}
