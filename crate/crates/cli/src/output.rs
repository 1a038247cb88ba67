//! Output writing: every artifact embeds provenance (config hash, seed,
//! version), and files land via write-then-rename so a failed command never
//! leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::AppError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub command: String,
    pub scenario: String,
}

impl Metadata {
    pub fn new(config_hash: &str, seed: u64, command: &str, scenario: &str) -> Self {
        Metadata {
            config_hash: config_hash.to_string(),
            seed,
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            scenario: scenario.to_string(),
        }
    }

    /// The `#`-prefixed comment block that precedes the header row of every
    /// CSV artifact.
    pub fn csv_comment_block(&self) -> String {
        format!(
            "# config_hash: {}\n# seed: {}\n# version: {}\n# command: {}\n# scenario: {}\n",
            self.config_hash, self.seed, self.version, self.command, self.scenario
        )
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| AppError::domain(format!("cannot create {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| AppError::domain(format!("cannot create {}: {e}", tmp.display())))?;
        f.write_all(bytes)
            .map_err(|e| AppError::domain(format!("write failed: {e}")))?;
        f.sync_all().ok();
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| AppError::domain(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Serializes a value as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::domain(format!("JSON encoding failed: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Writes a CSV artifact: metadata comment block, one header row, then rows.
/// Floats are rendered with Rust's shortest round-trip formatting, so output
/// bytes are a pure function of the computed values.
pub fn write_csv(
    path: &Path,
    metadata: &Metadata,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), AppError> {
    let mut text = metadata.csv_comment_block();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}
