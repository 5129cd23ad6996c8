//! Run manifests and output bookkeeping.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub timestamp: String,
    pub config_digest: String,
    pub tool_version: String,
    pub config: Value,
    pub outputs: Vec<String>,
    /// `running`, then `ok` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<u8>,
}

/// SHA-256 of the canonical JSON text (object keys sorted).
pub fn config_digest(config: &Value) -> String {
    // serde_json's default map is ordered by key, so this text is canonical
    let text = serde_json::to_string(config).expect("JSON values always serialise");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// An output directory with a manifest that tracks every file written.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Creates the directory and writes the initial manifest.
    pub fn start(dir: &Path, command: &str, config: Value) -> Result<Run, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let now = Utc::now();
        let digest = config_digest(&config);
        let manifest = RunManifest {
            run_id: format!("{}-{}", now.format("%Y%m%dT%H%M%S%.3fZ"), &digest[..12]),
            command: command.to_string(),
            timestamp: now.to_rfc3339(),
            config_digest: digest,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            outputs: Vec::new(),
            status: "running".to_string(),
            finished: None,
            exit_code: None,
        };
        let run = Run {
            dir: dir.to_path_buf(),
            manifest,
        };
        run.save_manifest()?;
        Ok(run)
    }

    fn save_manifest(&self) -> Result<(), Failure> {
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| Failure::io(&path, e))
    }

    /// Writes `name` inside the run directory through a buffered writer.
    pub fn write_with(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let result = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush()
        });
        result.map_err(|e| Failure::io(&path, e))?;
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).expect("outputs serialise");
        self.write_with(name, |w| writeln!(w, "{text}"))
    }

    /// Records the outcome. On failure an `error.json` is written as well.
    pub fn finish(mut self, outcome: &Result<(), Failure>) -> Result<(), Failure> {
        match outcome {
            Ok(()) => {
                self.manifest.status = "ok".to_string();
                self.manifest.exit_code = Some(0);
            }
            Err(f) => {
                // best effort: the manifest below still records the failure
                let _ = self.write_json("error.json", &f.to_json());
                self.manifest.status = "failed".to_string();
                self.manifest.exit_code = Some(f.exit_code());
            }
        }
        self.manifest.finished = Some(Utc::now().to_rfc3339());
        self.save_manifest()
    }
}
