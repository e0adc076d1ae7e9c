//! Desk-scale differentiable detector.
//!
//! Objects are bright 4-connected blobs on a darker field. Confidence grows
//! with the contrast between a box and the ring of pixels around it, so an
//! environment that washes out that contrast makes the detector lose the
//! object. The loss has two terms:
//!
//! * classification: `0.5 * max(0, margin - contrast)^2`
//! * box regression: squared offset between the luma-weighted centroid of a
//!   context window and the box centre, normalised by the box diagonal
//!
//! Both are smooth in the pixel values and have closed-form gradients.

use std::ops::Range;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{BoundingBox, CamFeatures, Detection, DetectorBackend, GroundTruth, LossTerms};
use crate::error::BackendError;
use crate::imaging::{BinaryMask, RasterImage};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobDetector {
    pub label: String,
    /// Label for blobs taller than `tall_ratio` times their width.
    pub tall_label: Option<String>,
    pub tall_ratio: f64,
    pub luma_threshold: f64,
    pub min_area: usize,
    /// Width of the ring around a box used as its local background.
    pub ring: usize,
    pub sharpness: f64,
    pub contrast_offset: f64,
    pub contrast_margin: f64,
    /// Margin around a box for the centroid window.
    pub context: usize,
    pub cam_stride: usize,
}

impl Default for BlobDetector {
    fn default() -> Self {
        Self {
            label: "car".into(),
            tall_label: Some("truck".into()),
            tall_ratio: 1.0,
            luma_threshold: 0.5,
            min_area: 6,
            ring: 3,
            sharpness: 12.0,
            contrast_offset: 0.2,
            contrast_margin: 1.0,
            context: 4,
            cam_stride: 2,
        }
    }
}

struct Regions {
    inner: (Range<usize>, Range<usize>),
    outer: (Range<usize>, Range<usize>),
}

impl Regions {
    fn new(b: &BoundingBox, pad: usize, w: usize, h: usize) -> Self {
        let inner = b.pixel_span(w, h);
        let outer = (
            inner.0.start.saturating_sub(pad)..(inner.0.end + pad).min(w),
            inner.1.start.saturating_sub(pad)..(inner.1.end + pad).min(h),
        );
        Self { inner, outer }
    }

    fn in_inner(&self, x: usize, y: usize) -> bool {
        self.inner.0.contains(&x) && self.inner.1.contains(&y)
    }
}

impl BlobDetector {
    fn luma(img: &RasterImage) -> Array2<f64> {
        img.luma()
    }

    /// `(contrast, n_inner, n_ring)` for a box.
    fn contrast(&self, luma: &Array2<f64>, b: &BoundingBox) -> (f64, usize, usize) {
        let (h, w) = luma.dim();
        let r = Regions::new(b, self.ring, w, h);
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for y in r.outer.1.clone() {
            for x in r.outer.0.clone() {
                if r.in_inner(x, y) {
                    s_in += luma[[y, x]];
                    n_in += 1;
                } else {
                    s_out += luma[[y, x]];
                    n_out += 1;
                }
            }
        }
        let mu_in = if n_in > 0 { s_in / n_in as f64 } else { 0.0 };
        let mu_out = if n_out > 0 { s_out / n_out as f64 } else { 0.0 };
        (mu_in - mu_out, n_in, n_out)
    }

    pub fn confidence_for(&self, img: &RasterImage, b: &BoundingBox) -> f64 {
        let (c, _, _) = self.contrast(&Self::luma(img), b);
        sigmoid(self.sharpness * (c - self.contrast_offset))
    }

    fn label_for(&self, b: &BoundingBox) -> String {
        match &self.tall_label {
            Some(tall) if b.height() > self.tall_ratio * b.width() => tall.clone(),
            _ => self.label.clone(),
        }
    }

    /// Adds the loss terms for one truth box; gradients are w.r.t. luma.
    fn accumulate(
        &self,
        luma: &Array2<f64>,
        b: &BoundingBox,
        g_cls: &mut Array2<f64>,
        g_reg: &mut Array2<f64>,
    ) -> (f64, f64) {
        let (h, w) = luma.dim();

        // classification hinge on contrast
        let (c, n_in, n_out) = self.contrast(luma, b);
        let slack = (self.contrast_margin - c).max(0.0);
        let cls = 0.5 * slack * slack;
        if slack > 0.0 {
            let r = Regions::new(b, self.ring, w, h);
            for y in r.outer.1.clone() {
                for x in r.outer.0.clone() {
                    // d cls / d c = -slack
                    g_cls[[y, x]] += if r.in_inner(x, y) {
                        -slack / n_in as f64
                    } else {
                        slack / n_out as f64
                    };
                }
            }
        }

        // centroid regression
        let win = Regions::new(b, self.context, w, h).outer;
        let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in win.1.clone() {
            for x in win.0.clone() {
                let l = luma[[y, x]];
                s += l;
                sx += (x as f64 + 0.5) * l;
                sy += (y as f64 + 0.5) * l;
            }
        }
        let mut reg = 0.0;
        if s > 1e-12 {
            let (cx, cy) = (sx / s, sy / s);
            let (bx, by) = b.center();
            let norm = b.width().powi(2) + b.height().powi(2);
            let (dx, dy) = (cx - bx, cy - by);
            reg = (dx * dx + dy * dy) / norm;
            for y in win.1.clone() {
                for x in win.0.clone() {
                    let px = x as f64 + 0.5 - cx;
                    let py = y as f64 + 0.5 - cy;
                    g_reg[[y, x]] += 2.0 * (dx * px + dy * py) / (s * norm);
                }
            }
        }
        (cls, reg)
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn luma_grad_to_pixels(g: &Array2<f64>) -> Array3<f64> {
    let (h, w) = g.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| g[[y, x]] * LUMA[c])
}

impl DetectorBackend for BlobDetector {
    fn detect(&mut self, image: &RasterImage) -> Result<Vec<Detection>, BackendError> {
        let luma = Self::luma(image);
        let mask = BinaryMask::from_bits(luma.mapv(|l| l > self.luma_threshold));
        let mut out = Vec::new();
        for comp in mask.components() {
            if comp.len() < self.min_area {
                continue;
            }
            let x0 = comp.iter().map(|p| p.0).min().unwrap_or(0);
            let x1 = comp.iter().map(|p| p.0).max().unwrap_or(0) + 1;
            let y0 = comp.iter().map(|p| p.1).min().unwrap_or(0);
            let y1 = comp.iter().map(|p| p.1).max().unwrap_or(0) + 1;
            let Some(b) = BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64) else {
                continue;
            };
            let (c, _, _) = self.contrast(&luma, &b);
            let conf = sigmoid(self.sharpness * (c - self.contrast_offset));
            out.push(Detection::new(b, self.label_for(&b), conf));
        }
        Ok(out)
    }

    fn loss_terms(&mut self, image: &RasterImage, gt: &GroundTruth) -> Result<LossTerms, BackendError> {
        let luma = Self::luma(image);
        let mut g_cls = Array2::zeros(luma.dim());
        let mut g_reg = Array2::zeros(luma.dim());
        let (mut cls, mut reg) = (0.0, 0.0);
        for obj in &gt.objects {
            let (c, r) = self.accumulate(&luma, &obj.bbox, &mut g_cls, &mut g_reg);
            cls += c;
            reg += r;
        }
        Ok(LossTerms {
            classification: cls,
            bbox_regression: reg,
            grad_classification: luma_grad_to_pixels(&g_cls),
            grad_bbox_regression: luma_grad_to_pixels(&g_reg),
        })
    }

    fn cam_layer(&self) -> Option<&str> {
        Some("luma_pool")
    }

    /// Two channels on a `cam_stride` grid: pooled luma and its complement.
    /// The target score is the mean pooled luma over cells the box touches.
    fn cam_features(&mut self, image: &RasterImage, target: &BoundingBox) -> Result<CamFeatures, BackendError> {
        let s = self.cam_stride.max(1);
        let luma = Self::luma(image);
        let (h, w) = luma.dim();
        let (gh, gw) = (h.div_ceil(s), w.div_ceil(s));
        let mut act = Array3::zeros((2, gh, gw));
        for gy in 0..gh {
            for gx in 0..gw {
                let (mut sum, mut n) = (0.0, 0);
                for y in gy * s..((gy + 1) * s).min(h) {
                    for x in gx * s..((gx + 1) * s).min(w) {
                        sum += luma[[y, x]];
                        n += 1;
                    }
                }
                let v = sum / n as f64;
                act[[0, gy, gx]] = v;
                act[[1, gy, gx]] = 1.0 - v;
            }
        }
        let mut grad = Array3::zeros((2, gh, gw));
        let (xs, ys) = target.pixel_span(w, h);
        if !xs.is_empty() && !ys.is_empty() {
            let cx = xs.start / s..(xs.end - 1) / s + 1;
            let cy = ys.start / s..(ys.end - 1) / s + 1;
            let n = (cx.len() * cy.len()) as f64;
            for gy in cy {
                for gx in cx.clone() {
                    grad[[0, gy, gx]] = 1.0 / n;
                }
            }
        }
        Ok(CamFeatures {
            layer: "luma_pool".into(),
            activations: act,
            gradients: grad,
        })
    }
}
