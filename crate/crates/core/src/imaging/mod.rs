//! Image and mask types, mask algebra, compositing, and the segmentation
//! backend interface that yields object / environment masks.

mod io;
mod mask;
mod raster;
mod segment;
mod synthetic;

pub use io::{load_mask_png, load_png, save_mask_png, save_png};
pub use mask::BinaryMask;
pub use raster::{RasterImage, MIN_SIDE};
pub use segment::{FixtureSegmenter, SegmentationOptions, SegmenterBackend, ThresholdSegmenter};
pub use synthetic::street_scene;

use crate::error::{Error, Result};

/// Object and environment masks for one seed image. The two always
/// partition the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub object: BinaryMask,
    pub environment: BinaryMask,
}

pub fn invert_mask(m: &BinaryMask) -> BinaryMask {
    m.inverted()
}

/// Segments `label` in `img` and returns the object mask together with its
/// complement, the environment mask that the inpainting model regenerates.
pub fn extract_environment_mask(img: &RasterImage, label: &str, seg: &mut dyn SegmenterBackend) -> Result<MaskPair> {
    extract_environment_mask_with(img, &[label], seg, &SegmentationOptions::default())
}

/// Multi-label variant: masks for every label are unioned into one object
/// mask before post-processing.
pub fn extract_environment_mask_with(
    img: &RasterImage,
    labels: &[&str],
    seg: &mut dyn SegmenterBackend,
    opts: &SegmentationOptions,
) -> Result<MaskPair> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("segmentation labels"));
    }
    let mut object = BinaryMask::new(img.width(), img.height());
    for label in labels {
        let m = seg
            .segment(img, label)
            .map_err(|e| Error::backend(format!("{}:{label}", img.source_id()), e))?;
        if m.dims() != img.dims() {
            return Err(Error::DimensionMismatch {
                expected: img.dims(),
                actual: m.dims(),
            });
        }
        object = object.union(&m)?;
    }
    let object = opts.apply(object);
    let label = labels.join("+");
    if object.count() == 0 {
        return Err(Error::SegmentationEmpty { label, all_true: false });
    }
    if object.count() == object.len() {
        return Err(Error::SegmentationEmpty { label, all_true: true });
    }
    let environment = object.inverted();
    Ok(MaskPair { object, environment })
}

/// Seed pixels under `object_mask`, generated pixels everywhere else. The
/// object region of the output is bit-identical to the seed.
pub fn composite_object_over(
    generated: &RasterImage,
    seed: &RasterImage,
    object_mask: &BinaryMask,
) -> Result<RasterImage> {
    if generated.dims() != seed.dims() {
        return Err(Error::DimensionMismatch {
            expected: seed.dims(),
            actual: generated.dims(),
        });
    }
    if object_mask.dims() != seed.dims() {
        return Err(Error::DimensionMismatch {
            expected: seed.dims(),
            actual: object_mask.dims(),
        });
    }
    let mut out = generated.pixels().clone();
    for ((y, x), &keep) in object_mask.bits().indexed_iter() {
        if keep {
            for c in 0..3 {
                out[[y, x, c]] = seed.pixels()[[y, x, c]];
            }
        }
    }
    RasterImage::new(out, generated.source_id())
}
