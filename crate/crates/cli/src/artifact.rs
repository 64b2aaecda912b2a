//! Reading inputs and writing provenance-stamped outputs.
//!
//! JSONL outputs start with a `{"_meta": ...}` line, JSON documents carry a
//! `_meta` key and CSV files start with `#` comment lines. Readers skip all of
//! these.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tigload::model::SCHEMA_VERSION;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub file: String,
    pub sha256: String,
}

/// Schema, configuration and input digests shared by one command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub schema: &'static str,
    pub command: String,
    pub config: Value,
    pub inputs: BTreeMap<String, InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            schema: SCHEMA_VERSION,
            command: command.to_string(),
            config: serde_json::to_value(cfg)?,
            inputs: BTreeMap::new(),
        })
    }

    /// Records `path` under `role` and returns its contents.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                file,
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(bytes)
    }

    fn meta(&self) -> Value {
        json!({ "_meta": self })
    }

    pub fn jsonl<T: Serialize>(&self, records: &[T]) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.meta())?;
        out.push(b'\n');
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    /// A JSON object with `_meta` followed by `key: value`.
    pub fn json_doc<T: Serialize>(&self, key: &str, value: &T) -> Result<Vec<u8>> {
        let mut doc = serde_json::Map::new();
        doc.insert("_meta".into(), serde_json::to_value(self)?);
        doc.insert(key.into(), serde_json::to_value(value)?);
        let mut out = serde_json::to_vec_pretty(&Value::Object(doc))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn csv(&self, header: &str, rows: &[String]) -> Result<Vec<u8>> {
        let mut out = String::new();
        writeln!(out, "# schema: {}", self.schema)?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?)?;
        for (role, d) in &self.inputs {
            writeln!(out, "# input {role}: {} sha256={}", d.file, d.sha256)?;
        }
        writeln!(out, "{header}")?;
        for r in rows {
            writeln!(out, "{r}")?;
        }
        Ok(out.into_bytes())
    }

    /// Provenance as a Markdown comment block.
    pub fn markdown_comment(&self) -> Result<String> {
        Ok(format!("<!-- {} -->\n", serde_json::to_string(self)?))
    }
}

/// Writes through a temporary file in the same directory so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

fn is_meta(line: &str) -> bool {
    line.trim_start().starts_with("{\"_meta\"")
}

/// Parses every non-blank, non-meta line, keeping the 1-based line number of
/// each record and a diagnostic for each line that fails.
pub fn parse_jsonl<T: DeserializeOwned>(bytes: &[u8]) -> Result<(Vec<(usize, T)>, Vec<LineDiagnostic>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Data(format!("input is not UTF-8: {e}")))?;
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || is_meta(line) {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => ok.push((i + 1, v)),
            Err(e) => bad.push(LineDiagnostic {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, bad))
}

/// Like [`parse_jsonl`] but any bad line is fatal.
pub fn parse_jsonl_strict<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    let (ok, bad) = parse_jsonl(bytes)?;
    if let Some(d) = bad.first() {
        return Err(CliError::Data(format!(
            "{name}:{}: {} ({} malformed line(s))",
            d.line,
            d.message,
            bad.len()
        ))
        .into());
    }
    Ok(ok.into_iter().map(|(_, v)| v).collect())
}

/// Reads `key` out of a JSON document written by [`Provenance::json_doc`].
pub fn parse_doc<T: DeserializeOwned>(bytes: &[u8], key: &str, name: &str) -> Result<T> {
    let mut doc: Value =
        serde_json::from_slice(bytes).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
    let v = doc
        .get_mut(key)
        .map(Value::take)
        .ok_or_else(|| CliError::Data(format!("{name}: missing `{key}`")))?;
    serde_json::from_value(v).map_err(|e| CliError::Data(format!("{name}: {e}")).into())
}
