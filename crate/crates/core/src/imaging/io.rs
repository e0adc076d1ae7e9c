use std::path::Path;

use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// Loads an image and converts it to RGB in `[0, 1]` (8-bit value / 255).
/// The source id is the file stem.
pub fn load_png(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|e| Error::ImageCodec {
        path: path.into(),
        source: e,
    })?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    RasterImage::from_rgb8(&img.to_rgb8(), id)
}

pub fn save_png(img: &RasterImage, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    img.to_rgb8()
        .write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::ImageCodec {
            path: path.into(),
            source: e,
        })?;
    crate::util::write_atomic(path, &buf)
}

/// Single-channel PNG, 255 for true and 0 for false.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let (w, h) = mask.dims();
    let gray = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    let mut buf = Vec::new();
    gray.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::ImageCodec {
            path: path.into(),
            source: e,
        })?;
    crate::util::write_atomic(path, &buf)
}

/// Any gray value above 127 reads as true.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|e| Error::ImageCodec {
            path: path.into(),
            source: e,
        })?
        .to_luma8();
    Ok(BinaryMask::from_fn(
        img.width() as usize,
        img.height() as usize,
        |x, y| img.get_pixel(x as u32, y as u32).0[0] > 127,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(10, 8, "a", |x, y| [x as f64 / 255.0, y as f64 / 255.0, 128.0 / 255.0]).unwrap();
        let p = dir.path().join("a.png");
        save_png(&img, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), img);

        let mask = BinaryMask::from_fn(10, 8, |x, y| x > y);
        let mp = dir.path().join("m.png");
        save_mask_png(&mask, &mp).unwrap();
        assert_eq!(load_mask_png(&mp).unwrap(), mask);
        let raw = image::open(&mp).unwrap();
        assert_eq!(raw.color(), image::ColorType::L8);
    }
}
