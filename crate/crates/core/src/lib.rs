//! Rare-failure-mode (RFM) discovery for object detectors.
//!
//! The environment around an object of interest is regenerated by an
//! inpainting diffusion process whose initial noise is pushed, by gradient
//! ascent, towards higher object-detection loss. The object itself is never
//! touched, so any detection failure on the result is caused by the new
//! environment. Generated candidates are then verified against the seed
//! image, explained with Grad-CAM overlays and image-to-text captions, and
//! the captions are scored against human evidence labels.
//!
//! Every heavy model (segmenter, detector, diffusion model, perceptual
//! network, captioner, image editor, video generator) sits behind a trait.
//! Deterministic toy implementations of each ship in-tree so the whole
//! pipeline runs at desk scale.

pub mod detection;
pub mod error;
pub mod evaluation;
pub mod explainability;
pub mod guidance;
pub mod imaging;
pub mod pipeline;
pub mod verification;
pub mod video;

pub(crate) mod util;

pub use detection::{
    classify_failure, compute_od_loss, detect, iou, BoundingBox, Detection, DetectionConfig, DetectionLoss,
    DetectionResult, DetectorBackend, FailureKind, FailureReport, GroundTruth,
};
pub use error::{BackendError, Error, Result};
pub use guidance::{
    generate_rfm_candidate, optimize_noise_step, DiffusionBackend, GuidanceConfig, GuidanceTrace, NoiseTensor,
};
pub use imaging::{composite_object_over, extract_environment_mask, invert_mask, BinaryMask, RasterImage};
