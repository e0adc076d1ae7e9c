use serde::{Deserialize, Serialize};

use super::{BinaryMask, RasterImage};
use crate::error::BackendError;

/// Produces an object mask for a label. Implementations are not assumed
/// reentrant, hence `&mut self`.
pub trait SegmenterBackend {
    fn segment(&mut self, image: &RasterImage, label: &str) -> Result<BinaryMask, BackendError>;
}

/// Post-processing applied to the unioned object mask. All off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationOptions {
    pub fill_holes: bool,
    pub largest_component: bool,
    /// Integer-pixel square dilation of the object mask.
    pub dilation: usize,
}

impl SegmentationOptions {
    pub fn apply(&self, mut mask: BinaryMask) -> BinaryMask {
        if self.fill_holes {
            mask = mask.holes_filled();
        }
        if self.largest_component {
            mask = mask.largest_component();
        }
        mask.dilated(self.dilation)
    }
}

/// Marks pixels whose luma exceeds a threshold. Ignores the label.
#[derive(Debug, Clone)]
pub struct ThresholdSegmenter {
    pub threshold: f64,
}

impl ThresholdSegmenter {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }
}

impl SegmenterBackend for ThresholdSegmenter {
    fn segment(&mut self, image: &RasterImage, _label: &str) -> Result<BinaryMask, BackendError> {
        Ok(BinaryMask::from_bits(image.luma().mapv(|l| l > self.threshold)))
    }
}

/// Returns a fixed mask, e.g. one loaded from disk.
#[derive(Debug, Clone)]
pub struct FixtureSegmenter {
    mask: BinaryMask,
}

impl FixtureSegmenter {
    pub fn new(mask: BinaryMask) -> Self {
        Self { mask }
    }
}

impl SegmenterBackend for FixtureSegmenter {
    fn segment(&mut self, image: &RasterImage, label: &str) -> Result<BinaryMask, BackendError> {
        if self.mask.dims() != image.dims() {
            return Err(BackendError::new(format!(
                "fixture mask for `{label}` is {:?}, image is {:?}",
                self.mask.dims(),
                image.dims()
            )));
        }
        Ok(self.mask.clone())
    }
}
