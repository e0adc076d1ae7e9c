//! Detector interface, differentiable detection loss, and the failure
//! taxonomy (missed / hallucination / misclassification).

mod boxes;
mod matching;
mod toy;

use std::io::{BufRead, Write};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use boxes::{iou, BoundingBox};
pub use matching::{classify_failure, FailureKind, FailureReport, MatchedPair};
pub use toy::BlobDetector;

use crate::error::{BackendError, Error, Result};
use crate::imaging::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: impl Into<String>, confidence: f64) -> Self {
        Self {
            bbox,
            label: label.into(),
            confidence,
        }
    }

    /// Descending confidence; ties by box lexicographic order, then label.
    pub(crate) fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then_with(|| self.bbox.lex_cmp(&other.bbox))
            .then_with(|| self.label.cmp(&other.label))
    }
}

/// Detector output for one image, sorted by descending confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionResult {
    pub fn new(image_id: impl Into<String>, mut detections: Vec<Detection>) -> Self {
        detections.sort_by(Detection::rank_cmp);
        Self {
            image_id: image_id.into(),
            detections,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_detections_jsonl<W: Write>(mut w: W, results: &[DetectionResult]) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections_jsonl<R: BufRead>(r: R) -> std::result::Result<Vec<DetectionResult>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let res: DetectionResult = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(DetectionResult::new(res.image_id, res.detections));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Reference objects, taken from the detector's verified output on the
/// unmodified seed image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<GroundTruthObject>,
}

impl GroundTruth {
    /// Seed detections whose label is in `labels`.
    pub fn from_detections(result: &DetectionResult, labels: &[&str]) -> Self {
        Self {
            objects: result
                .detections
                .iter()
                .filter(|d| labels.contains(&d.label.as_str()))
                .map(|d| GroundTruthObject {
                    label: d.label.clone(),
                    bbox: d.bbox,
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
    /// Weight of the box-regression term in the total loss.
    pub bbox_weight: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            iou_threshold: 0.5,
            bbox_weight: 1.0,
        }
    }
}

/// Detection loss: `total = classification + bbox_weight * bbox_regression`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub total: f64,
    pub classification: f64,
    pub bbox_regression: f64,
}

/// Loss components and their gradients with respect to image pixels
/// (height x width x 3), as reported by a differentiable backend.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub classification: f64,
    pub bbox_regression: f64,
    pub grad_classification: Array3<f64>,
    pub grad_bbox_regression: Array3<f64>,
}

/// Activations of a convolutional feature layer and the gradient of a
/// target score with respect to them, both channels x rows x cols.
#[derive(Debug, Clone)]
pub struct CamFeatures {
    pub layer: String,
    pub activations: Array3<f64>,
    pub gradients: Array3<f64>,
}

pub trait DetectorBackend {
    /// Raw detections; NMS is the backend's job. Must be deterministic.
    fn detect(&mut self, image: &RasterImage) -> std::result::Result<Vec<Detection>, BackendError>;

    fn loss_terms(&mut self, image: &RasterImage, gt: &GroundTruth) -> std::result::Result<LossTerms, BackendError>;

    /// Name of the layer used for Grad-CAM, if the backend exposes one.
    fn cam_layer(&self) -> Option<&str> {
        None
    }

    /// Feature activations and score gradients for the detection scored at
    /// `target`. Only called when [`DetectorBackend::cam_layer`] is `Some`.
    fn cam_features(
        &mut self,
        _image: &RasterImage,
        _target: &BoundingBox,
    ) -> std::result::Result<CamFeatures, BackendError> {
        Err(BackendError::new("no feature layer"))
    }
}

/// Runs the backend and keeps detections at or above the confidence
/// threshold, clipped to the image and sorted.
pub fn detect(img: &RasterImage, d: &mut dyn DetectorBackend, cfg: &DetectionConfig) -> Result<DetectionResult> {
    let raw = d.detect(img).map_err(|e| Error::backend(img.source_id(), e))?;
    let (w, h) = img.dims();
    let kept = raw
        .into_iter()
        .filter(|det| det.confidence >= cfg.confidence_threshold)
        .filter_map(|det| {
            let bbox = det.bbox.clipped(w, h)?;
            Some(Detection {
                bbox,
                confidence: det.confidence.clamp(0.0, 1.0),
                ..det
            })
        })
        .collect();
    Ok(DetectionResult::new(img.source_id(), kept))
}

/// Detection loss against `gt` and its gradient with respect to the image.
pub fn compute_od_loss(
    img: &RasterImage,
    gt: &GroundTruth,
    d: &mut dyn DetectorBackend,
    cfg: &DetectionConfig,
) -> Result<(DetectionLoss, Array3<f64>)> {
    if gt.is_empty() {
        return Err(Error::Precondition("ground truth is empty".into()));
    }
    let terms = d.loss_terms(img, gt).map_err(|e| Error::backend(img.source_id(), e))?;
    let lambda = cfg.bbox_weight;
    let loss = DetectionLoss {
        total: terms.classification + lambda * terms.bbox_regression,
        classification: terms.classification,
        bbox_regression: terms.bbox_regression,
    };
    if !(loss.total.is_finite() && loss.classification.is_finite() && loss.bbox_regression.is_finite()) {
        return Err(Error::NonFiniteLoss {
            total: loss.total,
            classification: loss.classification,
            bbox_regression: loss.bbox_regression,
        });
    }
    let expected = img.pixels().dim();
    if terms.grad_classification.dim() != expected || terms.grad_bbox_regression.dim() != expected {
        return Err(Error::ShapeMismatch(format!(
            "detector gradient shape differs from image {expected:?}"
        )));
    }
    let grad = if lambda == 0.0 {
        terms.grad_classification
    } else {
        terms.grad_classification + &(terms.grad_bbox_regression * lambda)
    };
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((loss, grad))
}
