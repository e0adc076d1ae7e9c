use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{BlobDetector, DetectionConfig, DetectorBackend, GroundTruth};
use crate::error::{Error, Result};
use crate::explainability::{FixtureCaptioner, RetryPolicy, DEFAULT_OPACITY};
use crate::guidance::{BackendFactory, DiffusionBackend, GuidanceConfig, LinearToyDiffusion};
use crate::imaging::{load_mask_png, FixtureSegmenter, SegmentationOptions, SegmenterBackend, ThresholdSegmenter};
use crate::util::{read_to_string, sha256_hex};
use crate::verification::{FilterConfig, IdentityFeatures, PerceptualBackend, PooledPyramid};
use crate::video::{StillVideo, VideoBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths resolve against the config file's directory.
    pub seed_image: PathBuf,
    pub object_label: String,
    pub prompts: PromptSuite,
    #[serde(default)]
    pub rng_seed: u64,
    /// Images per prompt; seeds are `rng_seed, rng_seed + 1, ...`.
    #[serde(default = "one")]
    pub samples_per_prompt: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub guidance: GuidanceSettings,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub segmentation: SegmentationOptions,
    /// Overrides the ground truth taken from the seed detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub caption: CaptionSettings,
    #[serde(default)]
    pub report: ReportSettings,
    #[serde(default)]
    pub backends: Backends,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSuite {
    pub positive: Vec<String>,
    #[serde(default = "default_negative")]
    pub negative: String,
}

fn default_negative() -> String {
    crate::explainability::prompts::NEGATIVE.to_string()
}

/// The guidance knobs a run sets globally; prompts and seeds vary per
/// candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSettings {
    pub alpha: f64,
    pub denoise_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_steps: Option<usize>,
    pub grad_norm_clip: f64,
    pub guidance_scale: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        Self {
            alpha: g.alpha,
            denoise_steps: g.denoise_steps,
            guidance_steps: g.guidance_steps,
            grad_norm_clip: g.grad_norm_clip,
            guidance_scale: g.guidance_scale,
        }
    }
}

impl GuidanceSettings {
    pub fn to_config(self, negative: &str) -> GuidanceConfig {
        GuidanceConfig {
            alpha: self.alpha,
            denoise_steps: self.denoise_steps,
            guidance_steps: self.guidance_steps,
            grad_norm_clip: self.grad_norm_clip,
            guidance_scale: self.guidance_scale,
            negative_prompt: negative.to_string(),
            ..GuidanceConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionSettings {
    pub opacity: f64,
    /// Concurrent caption requests.
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for CaptionSettings {
    fn default() -> Self {
        Self {
            opacity: DEFAULT_OPACITY,
            parallelism: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSettings {
    /// Multiplier for the MSE column of the summary table, e.g. 65025 to
    /// show 8-bit-domain values. Stored metrics stay in [0, 1] units.
    pub mse_scale: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { mse_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterSpec {
    Threshold {
        threshold: f64,
    },
    /// A prepared object mask (PNG, white = object).
    Fixture {
        mask: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Blob(BlobDetector),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSpec {
    LinearToy(LinearToyDiffusion),
}

impl PartialEq for DiffusionSpec {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptualSpec {
    Identity,
    PooledPyramid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteCaptionerSpec {
    /// Chat-completions style endpoint URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaptionerSpec {
    Fixture(FixtureCaptioner),
    Remote(RemoteCaptionerSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VideoSpec {
    Still(StillVideo),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backends {
    pub segmenter: SegmenterSpec,
    pub detector: DetectorSpec,
    pub diffusion: DiffusionSpec,
    pub perceptual: PerceptualSpec,
    /// Selected by id at caption time.
    pub captioners: BTreeMap<String, CaptionerSpec>,
    pub video: VideoSpec,
}

pub const DEFAULT_FIXTURE_CAPTION: &str =
    "The model's attention is spread over the road and the surrounding scenery rather than the vehicle.";

impl Default for Backends {
    fn default() -> Self {
        let mut captioners = BTreeMap::new();
        captioners.insert(
            "fixture".to_string(),
            CaptionerSpec::Fixture(FixtureCaptioner::with_fallback(DEFAULT_FIXTURE_CAPTION)),
        );
        Self {
            segmenter: SegmenterSpec::Threshold { threshold: 0.5 },
            detector: DetectorSpec::Blob(BlobDetector::default()),
            diffusion: DiffusionSpec::LinearToy(LinearToyDiffusion::default()),
            perceptual: PerceptualSpec::PooledPyramid,
            captioners,
            video: VideoSpec::Still(StillVideo::default()),
        }
    }
}

impl Backends {
    pub fn segmenter(&self, base_dir: &Path) -> Result<Box<dyn SegmenterBackend>> {
        Ok(match &self.segmenter {
            SegmenterSpec::Threshold { threshold } => Box::new(ThresholdSegmenter::new(*threshold)),
            SegmenterSpec::Fixture { mask } => Box::new(FixtureSegmenter::new(load_mask_png(&base_dir.join(mask))?)),
        })
    }

    pub fn detector(&self) -> Box<dyn DetectorBackend> {
        match &self.detector {
            DetectorSpec::Blob(b) => Box::new(b.clone()),
        }
    }

    pub fn perceptual(&self) -> Box<dyn PerceptualBackend> {
        match self.perceptual {
            PerceptualSpec::Identity => Box::new(IdentityFeatures),
            PerceptualSpec::PooledPyramid => Box::new(PooledPyramid),
        }
    }

    pub fn video(&self) -> Box<dyn VideoBackend> {
        match self.video {
            VideoSpec::Still(v) => Box::new(v),
        }
    }
}

impl BackendFactory for Backends {
    fn diffusion(&self) -> Result<Box<dyn DiffusionBackend>> {
        Ok(match &self.diffusion {
            DiffusionSpec::LinearToy(d) => Box::new(d.clone()),
        })
    }

    fn detector(&self) -> Result<Box<dyn DetectorBackend>> {
        Ok(Backends::detector(self))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Returns the config and the
    /// directory its relative paths resolve against.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = read_to_string(path).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.object_label.trim().is_empty() {
            return bad("object_label is empty");
        }
        if self.prompts.positive.is_empty() {
            return bad("prompts.positive is empty");
        }
        if self.prompts.positive.iter().any(|p| p.trim().is_empty()) {
            return bad("prompts.positive contains an empty prompt");
        }
        if self.samples_per_prompt == 0 || self.workers == 0 {
            return bad("samples_per_prompt and workers must be at least 1");
        }
        self.guidance.to_config(&self.prompts.negative).validate()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.detection.confidence_threshold) || !unit(self.detection.iou_threshold) {
            return bad("detection thresholds must lie in [0, 1]");
        }
        if !(self.detection.bbox_weight.is_finite() && self.detection.bbox_weight >= 0.0) {
            return bad("detection.bbox_weight must be finite and non-negative");
        }
        if !(self.filter.sigma.is_finite() && self.filter.sigma > 0.0) {
            return bad("filter.sigma must be positive");
        }
        if !unit(self.caption.opacity) {
            return bad("caption.opacity must lie in [0, 1]");
        }
        if self.caption.parallelism == 0 {
            return bad("caption.parallelism must be at least 1");
        }
        if !(self.report.mse_scale.is_finite() && self.report.mse_scale > 0.0) {
            return bad("report.mse_scale must be positive");
        }
        if let SegmenterSpec::Threshold { threshold } = self.backends.segmenter {
            if !unit(threshold) {
                return bad("segmenter threshold must lie in [0, 1]");
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.is_empty() {
                return bad("ground_truth override has no objects");
            }
        }
        Ok(())
    }

    pub fn rng_seeds(&self) -> Vec<u64> {
        (0..self.samples_per_prompt as u64)
            .map(|i| self.rng_seed.wrapping_add(i))
            .collect()
    }

    /// SHA-256 of the canonical JSON form, so formatting, key order and
    /// spelled-out defaults do not change it.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        sha256_hex(value.to_string().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}
