use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::util::{read_to_string, sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOG_DIR: &str = "logs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Config,
    Input,
    Mask,
    Image,
    Trace,
    Detections,
    Candidates,
    Metrics,
    Thermal,
    Captions,
    Table,
    Video,
    Report,
    Other,
}

impl ArtifactKind {
    pub fn of(rel: &str) -> Self {
        let ext = Path::new(rel).extension().and_then(|e| e.to_str()).unwrap_or("");
        let top = rel.split('/').next().unwrap_or("");
        match (top, ext) {
            ("config.toml", _) => Self::Config,
            ("inputs", _) => Self::Input,
            ("masks", _) => Self::Mask,
            ("candidates", _) => Self::Image,
            ("traces", _) => Self::Trace,
            ("thermal", _) => Self::Thermal,
            ("video", _) => Self::Video,
            ("detections.jsonl", _) | ("ground_truth.json", _) => Self::Detections,
            ("candidates.jsonl", _) => Self::Candidates,
            ("metrics.csv", _) | ("verify.json", _) => Self::Metrics,
            ("captions.jsonl", _) | ("caption_errors.json", _) => Self::Captions,
            ("report.md", _) => Self::Report,
            (_, "csv") | (_, "txt") => Self::Table,
            _ => Self::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    /// Digest of the content with timestamp fields removed.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed_sha256: String,
    pub tool_version: String,
    pub created_at: String,
    pub updated_at: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// Keyed by path relative to the run directory, `/`-separated.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Digest that ignores `created_at` in JSON-lines files, so reruns that
/// only differ in timestamps hash the same.
pub fn content_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let text = String::from_utf8_lossy(&bytes);
        let mut canon = String::new();
        for line in text.lines() {
            match serde_json::from_str::<serde_json::Value>(line) {
                Ok(serde_json::Value::Object(mut m)) => {
                    m.remove("created_at");
                    canon.push_str(&serde_json::Value::Object(m).to_string());
                }
                _ => canon.push_str(line),
            }
            canon.push('\n');
        }
        return Ok(sha256_hex(canon.as_bytes()));
    }
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(run_id: String, config_hash: String, seed_sha256: String) -> Self {
        let t = now();
        Self {
            run_id,
            config_hash,
            seed_sha256,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: t.clone(),
            updated_at: t,
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingStage("generate"));
        }
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| Error::parse(&path, e))
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.contains_key(stage)
    }

    pub fn require(&self, stage: &'static str) -> Result<()> {
        if self.has_stage(stage) {
            Ok(())
        } else {
            Err(Error::MissingStage(stage))
        }
    }

    /// Re-indexes every file under the run directory, marks the stage as
    /// complete and writes the manifest atomically.
    pub fn finish_stage(&mut self, run_dir: &Path, stage: &str, mut outputs: Vec<String>) -> Result<()> {
        self.artifacts = index(run_dir)?;
        outputs.sort();
        let t = now();
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                completed_at: t.clone(),
                outputs,
            },
        );
        self.updated_at = t;
        self.save(run_dir)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&run_dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// All files except the manifest itself, logs and temp files.
pub fn index(run_dir: &Path) -> Result<BTreeMap<String, Artifact>> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(run_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(run_dir, e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(run_dir)
            .expect("walk stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_FILE || rel.starts_with(&format!("{LOG_DIR}/")) || rel.ends_with(".tmp") {
            continue;
        }
        let sha256 = content_digest(entry.path())?;
        out.insert(
            rel.clone(),
            Artifact {
                kind: ArtifactKind::of(&rel),
                sha256,
            },
        );
    }
    Ok(out)
}
