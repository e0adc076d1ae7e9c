use ndarray::Array3;

use super::colormap::JET;
use super::ActivationHeatmap;
use crate::error::{Error, Result};
use crate::imaging::RasterImage;

pub const DEFAULT_OPACITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalImage {
    pub image: RasterImage,
    pub base_image_id: String,
    pub heatmap_ref: String,
}

/// 256-entry LUT lookup, nearest index.
pub(crate) fn jet(v: f64) -> [f64; 3] {
    let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
    JET[i].map(|c| c as f64 / 255.0)
}

/// `opacity * jet(h) + (1 - opacity) * img`, per pixel.
pub fn render_thermal(img: &RasterImage, h: &ActivationHeatmap, opacity: f64) -> Result<ThermalImage> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::Precondition(format!("opacity {opacity} outside [0, 1]")));
    }
    if h.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: h.dims(),
        });
    }
    let src = img.pixels();
    let px = Array3::from_shape_fn(src.dim(), |(y, x, c)| {
        let heat = jet(h.values[[y, x]])[c];
        opacity * heat + (1.0 - opacity) * src[[y, x, c]]
    });
    Ok(ThermalImage {
        image: RasterImage::clamped(px, format!("{}-thermal", img.source_id()))?,
        base_image_id: img.source_id().to_string(),
        heatmap_ref: h.source_layer.clone(),
    })
}
