//! Per-frame evaluation of generated videos and persistence of failures
//! under semantic edits. Video generation and image editing are backends.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{classify_failure, detect, DetectionConfig, DetectorBackend, FailureReport, GroundTruth};
use crate::error::{BackendError, Error, Result};
use crate::explainability::prompts::{VIDEO_NEGATIVE, VIDEO_POSITIVE};
use crate::imaging::{load_png, save_png, RasterImage};
use crate::util::{read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<RasterImage>,
    fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMetadata {
    pub fps: f64,
    pub frame_count: usize,
}

impl VideoClip {
    pub fn new(frames: Vec<RasterImage>, fps: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Precondition("video clip has no frames".into()));
        };
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Precondition(format!("fps must be positive, got {fps}")));
        }
        if let Some(bad) = frames.iter().find(|f| f.dims() != first.dims()) {
            return Err(Error::DimensionMismatch {
                expected: first.dims(),
                actual: bad.dims(),
            });
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[RasterImage] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// Reads `metadata.json` and `frame_NNNN.png` files in name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("metadata.json");
        let meta: VideoMetadata =
            serde_json::from_str(&read_to_string(&meta_path)?).map_err(|e| Error::parse(&meta_path, e))?;
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        names.sort();
        if names.len() != meta.frame_count {
            return Err(Error::parse(
                &meta_path,
                format!("frame_count {} but {} png frames", meta.frame_count, names.len()),
            ));
        }
        let frames = names.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?;
        Self::new(frames, meta.fps)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            save_png(f, &dir.join(format!("frame_{i:04}.png")))?;
        }
        let meta = VideoMetadata {
            fps: self.fps,
            frame_count: self.frames.len(),
        };
        write_atomic(
            &dir.join("metadata.json"),
            serde_json::to_string_pretty(&meta).unwrap().as_bytes(),
        )
    }
}

/// Image plus prompt pair to clip.
pub trait VideoBackend {
    fn generate(&mut self, anchor: &RasterImage, positive: &str, negative: &str) -> Result<VideoClip, BackendError>;
}

/// Holds the anchor frame still for `frames` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StillVideo {
    pub frames: usize,
    pub fps: f64,
}

impl Default for StillVideo {
    fn default() -> Self {
        Self { frames: 8, fps: 8.0 }
    }
}

impl VideoBackend for StillVideo {
    fn generate(&mut self, anchor: &RasterImage, _: &str, _: &str) -> Result<VideoClip, BackendError> {
        let frames = (0..self.frames)
            .map(|i| anchor.clone().with_source_id(format!("{}-f{i:04}", anchor.source_id())))
            .collect();
        VideoClip::new(frames, self.fps).map_err(|e| BackendError::new(e.to_string()))
    }
}

pub fn generate_video(anchor: &RasterImage, b: &mut dyn VideoBackend) -> Result<VideoClip> {
    b.generate(anchor, VIDEO_POSITIVE, VIDEO_NEGATIVE)
        .map_err(|e| Error::backend(anchor.source_id(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEvaluation {
    pub reports: Vec<FailureReport>,
    /// Over the frames that were evaluated.
    pub failing_fraction: f64,
    /// Set when a backend failure stopped evaluation early.
    pub aborted: Option<String>,
}

impl VideoEvaluation {
    pub fn is_complete(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Every frame is scored against the seed ground truth.
pub fn evaluate_video(
    v: &VideoClip,
    gt: &GroundTruth,
    d: &mut dyn DetectorBackend,
    cfg: &DetectionConfig,
) -> Result<VideoEvaluation> {
    let mut reports = Vec::with_capacity(v.frames.len());
    let mut aborted = None;
    for (i, frame) in v.frames.iter().enumerate() {
        match detect(frame, d, cfg) {
            Ok(res) => reports.push(classify_failure(&res, gt, cfg)),
            Err(e) => {
                log::warn!("video evaluation stopped at frame {i}: {e}");
                aborted = Some(format!("frame {i}: {e}"));
                break;
            }
        }
    }
    let failing = reports.iter().filter(|r| r.kind.is_failure()).count();
    let failing_fraction = if reports.is_empty() {
        0.0
    } else {
        failing as f64 / reports.len() as f64
    };
    Ok(VideoEvaluation {
        reports,
        failing_fraction,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub base_image_id: String,
    pub edit_prompt: String,
    pub backend_id: String,
}

/// Targeted edit of a real image, e.g. by null-text inversion.
pub trait EditBackend {
    fn id(&self) -> &str;
    fn edit(&mut self, base: &RasterImage, prompt: &str) -> Result<RasterImage, BackendError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEdit;

impl EditBackend for IdentityEdit {
    fn id(&self) -> &str {
        "identity"
    }

    fn edit(&mut self, base: &RasterImage, _: &str) -> Result<RasterImage, BackendError> {
        Ok(base.clone())
    }
}

/// Returns a stored image per prompt; unknown prompts fail.
#[derive(Debug, Clone, Default)]
pub struct FixtureEdit {
    pub variants: BTreeMap<String, RasterImage>,
}

impl EditBackend for FixtureEdit {
    fn id(&self) -> &str {
        "fixture"
    }

    fn edit(&mut self, _: &RasterImage, prompt: &str) -> Result<RasterImage, BackendError> {
        self.variants
            .get(prompt)
            .cloned()
            .ok_or_else(|| BackendError::new(format!("no fixture for `{prompt}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum VariantOutcome {
    Evaluated { report: FailureReport },
    Inconclusive { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub variant_id: String,
    pub edit_prompt: String,
    pub outcome: VariantOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceResult {
    pub base_report: FailureReport,
    pub variants: Vec<Variant>,
    /// True iff at least one variant was evaluated and every evaluated
    /// variant still fails.
    pub persisted: bool,
}

impl PersistenceResult {
    pub fn inconclusive(&self) -> bool {
        !self
            .variants
            .iter()
            .any(|v| matches!(v.outcome, VariantOutcome::Evaluated { .. }))
    }

    /// Variants on which the detector recovered.
    pub fn broken_by(&self) -> Vec<&str> {
        self.variants
            .iter()
            .filter(|v| matches!(&v.outcome, VariantOutcome::Evaluated { report } if !report.kind.is_failure()))
            .map(|v| v.variant_id.as_str())
            .collect()
    }
}

pub fn check_persistence(
    base: &RasterImage,
    edits: &[EditRequest],
    gt: &GroundTruth,
    edit_backend: &mut dyn EditBackend,
    d: &mut dyn DetectorBackend,
    cfg: &DetectionConfig,
) -> Result<PersistenceResult> {
    let base_report = classify_failure(&detect(base, d, cfg)?, gt, cfg);
    if !base_report.kind.is_failure() {
        return Err(Error::Precondition(format!(
            "`{}` is not a failure case",
            base.source_id()
        )));
    }
    let mut variants = Vec::with_capacity(edits.len());
    for (i, req) in edits.iter().enumerate() {
        if req.edit_prompt.trim().is_empty() {
            return Err(Error::Precondition(format!("edit {i} has an empty prompt")));
        }
        let variant_id = format!("{}-edit{i:02}", base.source_id());
        let outcome = match edit_backend.edit(base, &req.edit_prompt) {
            Ok(img) => {
                let img = img.with_source_id(variant_id.clone());
                match detect(&img, d, cfg) {
                    Ok(res) => VariantOutcome::Evaluated {
                        report: classify_failure(&res, gt, cfg),
                    },
                    Err(e) => VariantOutcome::Inconclusive { error: e.to_string() },
                }
            }
            Err(e) => VariantOutcome::Inconclusive { error: e.0 },
        };
        variants.push(Variant {
            variant_id,
            edit_prompt: req.edit_prompt.clone(),
            outcome,
        });
    }
    let evaluated: Vec<&FailureReport> = variants
        .iter()
        .filter_map(|v| match &v.outcome {
            VariantOutcome::Evaluated { report } => Some(report),
            VariantOutcome::Inconclusive { .. } => None,
        })
        .collect();
    let persisted = !evaluated.is_empty() && evaluated.iter().all(|r| r.kind.is_failure());
    Ok(PersistenceResult {
        base_report,
        variants,
        persisted,
    })
}
