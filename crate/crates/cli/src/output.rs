//! Run manifests and the CSV/JSON result files that point back at them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct DataRef {
    pub path: String,
    pub sha256: String,
    pub subjects: usize,
    pub records: usize,
    pub rejected_rows: usize,
}

/// Everything needed to rerun a command. `run_id` depends only on the
/// command, resolved config and input digests, never on timing.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub run_id: String,
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<DataRef>,
    pub artifacts: Vec<String>,
    pub timings_secs: BTreeMap<String, f64>,
}

/// Collects artifacts and timings while a command runs, then writes the
/// manifest last.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Run {
    pub fn start(
        dir: &Path,
        command: &str,
        config: &impl Serialize,
        seeds: serde_json::Value,
        inputs: Vec<DataRef>,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let config = serde_json::to_value(config)?;
        let mut key = format!("{command}\n{config}\n{seeds}");
        for i in &inputs {
            key.push('\n');
            key.push_str(&i.sha256);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: "fewshot".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                run_id: sha256_hex(key.as_bytes())[..16].to_string(),
                config,
                seeds,
                inputs,
                artifacts: Vec::new(),
                timings_secs: BTreeMap::new(),
            },
            started: Instant::now(),
        })
    }

    pub fn manifest_name(&self) -> String {
        format!("{}-manifest.json", self.manifest.command)
    }

    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.manifest.timings_secs.insert(label.into(), t0.elapsed().as_secs_f64());
        out
    }

    fn register(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.into());
        self.dir.join(name)
    }

    /// Writes `rows` under a `# manifest=... run_id=...` comment line.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T], header: &[&str]) -> Result<(), CliError> {
        let path = self.register(name);
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# manifest={} run_id={}", self.manifest_name(), self.manifest.run_id)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `value` as JSON with `manifest` and `run_id` fields prepended.
    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.register(name);
        let mut obj = serde_json::Map::new();
        obj.insert("manifest".into(), self.manifest_name().into());
        obj.insert("run_id".into(), self.manifest.run_id.clone().into());
        match serde_json::to_value(value)? {
            serde_json::Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("value".into(), other);
            }
        }
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &obj)?;
        writeln!(out)?;
        Ok(())
    }

    /// Registers a file the caller writes itself.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.register(name)
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest
            .timings_secs
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let path = self.dir.join(self.manifest_name());
        let mut out = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, &self.manifest)?;
        writeln!(out)?;
        Ok(path)
    }
}
