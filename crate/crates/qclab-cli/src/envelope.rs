//! Report envelopes: one JSON document per command run, wrapping the typed
//! payload with provenance (command, seed, config echo, software version).
//! Files land atomically via a temp-file rename so a failed run never leaves
//! a partial report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub command: String,
    pub created_unix_ms: u64,
    pub software: Software,
    pub master_seed: u64,
    pub serial: bool,
    pub config: BTreeMap<String, String>,
    pub payload: serde_json::Value,
}

impl Envelope {
    pub fn new(
        command: &str,
        master_seed: u64,
        serial: bool,
        config: BTreeMap<String, String>,
        payload: serde_json::Value,
    ) -> Self {
        let created_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Envelope {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            created_unix_ms,
            software: Software {
                name: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            master_seed,
            serial,
            config,
            payload,
        }
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    tmp.set_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move report into place at {}", path.display()))?;
    Ok(())
}

pub fn write_envelope(dir: &Path, envelope: &Envelope) -> Result<PathBuf> {
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(envelope)?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Version-gated reader: envelopes from any schema version up to the current
/// one parse; later majors are rejected rather than misread.
pub fn read_envelope(path: &Path) -> Result<Envelope> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read report {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .context("report has no schema_version field")?;
    if version as u32 > SCHEMA_VERSION {
        bail!("report schema version {version} is newer than supported {SCHEMA_VERSION}");
    }
    Ok(serde_json::from_value(value)?)
}
