//! Output plumbing: provenance headers, config hashing and atomic writes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use catrl::{Error, Result, LIBRARY_VERSION};

/// Provenance stamped on every report the CLI writes.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub command: String,
    pub library_version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Header {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            library_version: LIBRARY_VERSION.to_string(),
            config_sha256: config_hash(config)?,
            seed,
        })
    }

    /// `key: value` lines, for `#`-comment blocks.
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("catrl {}", self.library_version),
            format!("command: {}", self.command),
            format!("config-sha256: {}", self.config_sha256),
            format!("seed: {}", self.seed),
        ]
    }

    pub fn comment_block(&self) -> String {
        self.lines().iter().map(|l| format!("# {l}\n")).collect()
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// JSON document `{"header": ..., <name>: body}`.
pub fn write_json_report<T: Serialize>(path: &Path, header: &Header, name: &str, body: &T) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("header".into(), serde_json::to_value(header)?);
    doc.insert(name.into(), serde_json::to_value(body)?);
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(doc))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `base` with its extension replaced, e.g. `policy.json` -> `policy.fitlog.json`.
pub fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.{suffix}"))
}
