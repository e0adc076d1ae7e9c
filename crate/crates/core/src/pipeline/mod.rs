//! Run orchestration: configuration, the run directory and its manifest,
//! and one function per pipeline stage.
//!
//! A run directory looks like this after every stage has run:
//!
//! ```text
//! config.toml            normalized config snapshot
//! manifest.json          index of every file below, with digests
//! inputs/                seed image, copied labels
//! masks/                 object and environment masks
//! ground_truth.json
//! candidates/ traces/    generated images and per-step loss traces
//! candidates.jsonl       one CandidateRecord per image
//! detections.jsonl       detector output for the seed and every candidate
//! metrics.csv summary.*  verify.json
//! thermal/ captions.jsonl
//! caption_scores.csv caption_table.* regions_table.*
//! video/                 per-clip frame reports
//! report.md
//! ```

mod config;
mod manifest;
mod stages;

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use config::{
    Backends, CaptionSettings, CaptionerSpec, DetectorSpec, DiffusionSpec, GuidanceSettings, PerceptualSpec,
    PromptSuite, RemoteCaptionerSpec, ReportSettings, RunConfig, SegmenterSpec, VideoSpec, DEFAULT_FIXTURE_CAPTION,
};
pub use manifest::{content_digest, Artifact, ArtifactKind, RunManifest, StageRecord, MANIFEST_FILE};
pub use stages::{
    cmd_caption, cmd_evaluate_captions, cmd_generate, cmd_label_template, cmd_report, cmd_verify, cmd_video_eval,
    cmd_video_gen, write_demo, CaptionOutcome, EvaluateOutcome, GenerateOutcome, VerifyOutcome, VideoOutcome,
};

use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

pub mod stage {
    pub const GENERATE: &str = "generate";
    pub const VERIFY: &str = "verify";
    pub const CAPTION: &str = "caption";
    pub const EVALUATE: &str = "evaluate-captions";
    pub const VIDEO: &str = "video-eval";
    pub const REPORT: &str = "report";
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) => 2,
        Error::SeedGateFailed(_) => 3,
        Error::MissingStage(_) => 4,
        _ => 1,
    }
}

/// An existing run directory with its manifest and config snapshot.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: RunConfig,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        let config = RunConfig::from_toml(&read_to_string(&dir.join("config.toml"))?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            config,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn finish(&mut self, stage: &str, outputs: Vec<String>) -> Result<()> {
        self.manifest.finish_stage(&self.dir, stage, outputs)
    }
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, e))
}
