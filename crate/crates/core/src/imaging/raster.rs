use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Smallest side length accepted for a raster image.
pub const MIN_SIDE: usize = 8;

/// RGB image with channel values in `[0, 1]`, stored height x width x 3.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pixels: Array3<f64>,
    source_id: String,
}

impl RasterImage {
    pub fn new(pixels: Array3<f64>, source_id: impl Into<String>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::InvalidImage(format!("expected 3 channels, got {c}")));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
                min: MIN_SIDE,
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            source_id: source_id.into(),
        })
    }

    /// Like [`RasterImage::new`] but clamps values into `[0, 1]` (NaN maps to 0).
    pub fn clamped(mut pixels: Array3<f64>, source_id: impl Into<String>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(pixels, source_id)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        source_id: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                for c in 0..3 {
                    pixels[[y, x, c]] = p[c];
                }
            }
        }
        Self::new(pixels, source_id)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3], source_id: impl Into<String>) -> Result<Self> {
        Self::from_fn(width, height, source_id, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        [self.pixels[[y, x, 0]], self.pixels[[y, x, 1]], self.pixels[[y, x, 2]]]
    }

    /// ITU-R BT.601 luma, height x width.
    pub fn luma(&self) -> Array2<f64> {
        let (h, w, _) = self.pixels.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * self.pixels[[y, x, 0]] + 0.587 * self.pixels[[y, x, 1]] + 0.114 * self.pixels[[y, x, 2]]
        })
    }

    /// Quantizes to 8 bits per channel, rounding to nearest.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w, _) = self.pixels.dim();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            image::Rgb(p.map(|v| (v * 255.0).round() as u8))
        })
    }

    pub fn from_rgb8(img: &image::RgbImage, source_id: impl Into<String>) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut pixels = Array3::zeros((h, w, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[[y as usize, x as usize, c]] = p.0[c] as f64 / 255.0;
            }
        }
        Self::new(pixels, source_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_small() {
        assert!(matches!(
            RasterImage::filled(8, 8, [1.5, 0.0, 0.0], "x"),
            Err(Error::InvalidImage(_))
        ));
        assert!(matches!(
            RasterImage::filled(7, 8, [0.5; 3], "x"),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(RasterImage::new(Array3::zeros((8, 8, 4)), "x").is_err());
    }

    #[test]
    fn clamped_fixes_range() {
        let mut px = Array3::from_elem((8, 8, 3), 2.0);
        px[[0, 0, 0]] = f64::NAN;
        px[[0, 0, 1]] = -1.0;
        let img = RasterImage::clamped(px, "c").unwrap();
        assert_eq!(img.get(0, 0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn rgb8_roundtrip_is_exact_on_quantized_values() {
        let img = RasterImage::from_fn(9, 8, "q", |x, y| {
            [(x * 20) as f64 / 255.0, (y * 30) as f64 / 255.0, 1.0]
        })
        .unwrap();
        let back = RasterImage::from_rgb8(&img.to_rgb8(), "q").unwrap();
        assert_eq!(back, img);
    }
}
