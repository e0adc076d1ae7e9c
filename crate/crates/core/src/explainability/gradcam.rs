use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::detection::{iou, BoundingBox, DetectionResult, DetectorBackend, GroundTruthObject};
use crate::error::{Error, Result};
use crate::imaging::RasterImage;

/// Values in [0, 1]; max is 1 unless the map is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationHeatmap {
    pub values: Array2<f64>,
    pub source_layer: String,
}

impl ActivationHeatmap {
    pub fn zeros(width: usize, height: usize, layer: impl Into<String>) -> Self {
        Self {
            values: Array2::zeros((height, width)),
            source_layer: layer.into(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let (h, w) = self.values.dim();
        (w, h)
    }

    /// (x, y) of the first maximum in raster order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((y, x), &v) in self.values.indexed_iter() {
            if v > best.2 {
                best = (x, y, v);
            }
        }
        (best.0, best.1)
    }
}

/// Which detector score Grad-CAM differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "box")]
pub enum CamTarget {
    Detection(BoundingBox),
    GroundTruthBox(BoundingBox),
    Degenerate,
}

/// Best-IoU detection for the object, else the most confident detection,
/// else the score at the ground-truth box when the backend exposes a
/// feature layer, else the degenerate zero map.
pub fn select_cam_target(
    result: &DetectionResult,
    object: &GroundTruthObject,
    iou_threshold: f64,
    has_layer: bool,
) -> CamTarget {
    let matched = result
        .detections
        .iter()
        .map(|d| (d, iou(&d.bbox, &object.bbox)))
        .filter(|(_, v)| *v >= iou_threshold)
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.rank_cmp(a.0)));
    if let Some((d, _)) = matched {
        return CamTarget::Detection(d.bbox);
    }
    if let Some(d) = result.detections.first() {
        return CamTarget::Detection(d.bbox);
    }
    if has_layer {
        CamTarget::GroundTruthBox(object.bbox)
    } else {
        CamTarget::Degenerate
    }
}

pub fn grad_cam(img: &RasterImage, target: &CamTarget, d: &mut dyn DetectorBackend) -> Result<ActivationHeatmap> {
    let (w, h) = img.dims();
    let bbox = match target {
        CamTarget::Degenerate => {
            let layer = d.cam_layer().unwrap_or("none").to_string();
            return Ok(ActivationHeatmap::zeros(w, h, layer));
        }
        CamTarget::Detection(b) | CamTarget::GroundTruthBox(b) => b,
    };
    let Some(layer) = d.cam_layer().map(str::to_string) else {
        return Err(Error::FeatureUnavailable);
    };
    let f = d
        .cam_features(img, bbox)
        .map_err(|e| Error::backend(img.source_id(), e))?;
    if f.activations.dim() != f.gradients.dim() {
        return Err(Error::ShapeMismatch(format!(
            "activations {:?} vs gradients {:?}",
            f.activations.dim(),
            f.gradients.dim()
        )));
    }
    let weights = f
        .gradients
        .mean_axis(Axis(1))
        .and_then(|m| m.mean_axis(Axis(1)))
        .ok_or(Error::EmptyInput("feature map"))?;
    let (_, fh, fw) = f.activations.dim();
    let mut cam = Array2::<f64>::zeros((fh, fw));
    for (c, wc) in weights.iter().enumerate() {
        cam.scaled_add(*wc, &f.activations.index_axis(Axis(0), c));
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let mut up = upsample_bilinear(&cam, w, h);
    let max = up.fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 && max.is_finite() {
        up.mapv_inplace(|v| (v / max).clamp(0.0, 1.0));
    } else {
        up.fill(0.0);
    }
    Ok(ActivationHeatmap {
        values: up,
        source_layer: layer,
    })
}

/// Half-pixel-centre bilinear resize with edge clamping.
fn upsample_bilinear(src: &Array2<f64>, width: usize, height: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let coord = |i: usize, n: usize, sn: usize| {
        let u = ((i as f64 + 0.5) * sn as f64 / n as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i0 = u.floor() as usize;
        (i0, (i0 + 1).min(sn - 1), u - i0 as f64)
    };
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, ty) = coord(y, height, sh);
        let (x0, x1, tx) = coord(x, width, sw);
        let top = src[[y0, x0]] * (1.0 - tx) + src[[y0, x1]] * tx;
        let bot = src[[y1, x0]] * (1.0 - tx) + src[[y1, x1]] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{BlobDetector, CamFeatures, Detection, GroundTruth, LossTerms};
    use crate::error::BackendError;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// One feature layer; the score is the mean of channel 0.
    struct MeanChannel {
        act: Array3<f64>,
    }

    impl DetectorBackend for MeanChannel {
        fn detect(&mut self, _: &RasterImage) -> Result<Vec<Detection>, BackendError> {
            Ok(vec![])
        }
        fn loss_terms(&mut self, _: &RasterImage, _: &GroundTruth) -> Result<LossTerms, BackendError> {
            Err(BackendError::new("unused"))
        }
        fn cam_layer(&self) -> Option<&str> {
            Some("conv")
        }
        fn cam_features(&mut self, _: &RasterImage, _: &BoundingBox) -> Result<CamFeatures, BackendError> {
            let (c, h, w) = self.act.dim();
            let mut g = Array3::zeros((c, h, w));
            g.index_axis_mut(Axis(0), 0).fill(1.0 / (h * w) as f64);
            Ok(CamFeatures {
                layer: "conv".into(),
                activations: self.act.clone(),
                gradients: g,
            })
        }
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn mean_channel_score_gives_scaled_channel() {
        // same resolution as the image, so no resampling: cam = a0 / max(a0)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let act = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0..1.0));
        let img = RasterImage::filled(8, 8, [0.5; 3], "i").unwrap();
        let h = grad_cam(
            &img,
            &CamTarget::Detection(bx(0.0, 0.0, 8.0, 8.0)),
            &mut MeanChannel { act: act.clone() },
        )
        .unwrap();
        let a0 = act.index_axis(Axis(0), 0);
        let max = a0.fold(0.0f64, |m, &v| m.max(v));
        for ((y, x), v) in h.values.indexed_iter() {
            assert!((v - a0[[y, x]] / max).abs() < 1e-12);
        }
        assert_eq!(h.source_layer, "conv");
    }

    #[test]
    fn zero_gradient_gives_zero_map() {
        let img = RasterImage::filled(16, 16, [0.5; 3], "i").unwrap();
        // box outside the image: toy detector reports no score gradient
        let h = grad_cam(
            &img,
            &CamTarget::Detection(bx(40.0, 40.0, 50.0, 50.0)),
            &mut BlobDetector::default(),
        )
        .unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
        let h = grad_cam(&img, &CamTarget::Degenerate, &mut BlobDetector::default()).unwrap();
        assert_eq!(h.dims(), (16, 16));
    }

    #[test]
    fn missing_layer_is_reported() {
        struct NoLayer;
        impl DetectorBackend for NoLayer {
            fn detect(&mut self, _: &RasterImage) -> Result<Vec<Detection>, BackendError> {
                Ok(vec![])
            }
            fn loss_terms(&mut self, _: &RasterImage, _: &GroundTruth) -> Result<LossTerms, BackendError> {
                Err(BackendError::new("unused"))
            }
        }
        let img = RasterImage::filled(8, 8, [0.5; 3], "i").unwrap();
        let err = grad_cam(&img, &CamTarget::Detection(bx(0.0, 0.0, 4.0, 4.0)), &mut NoLayer).unwrap_err();
        assert!(matches!(err, Error::FeatureUnavailable));
    }

    #[test]
    fn upsampling_of_constant_is_constant_and_corners_hit_sources() {
        let src = Array2::from_elem((3, 4), 0.25);
        assert!(upsample_bilinear(&src, 13, 7).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let src = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = upsample_bilinear(&src, 4, 4);
        assert_eq!(up[[0, 0]], 0.0);
        assert_eq!(up[[3, 3]], 3.0);
        assert!((up[[0, 1]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn target_selection_order() {
        let obj = GroundTruthObject {
            label: "car".into(),
            bbox: bx(10.0, 10.0, 20.0, 20.0),
        };
        let near = Detection::new(bx(11.0, 10.0, 21.0, 20.0), "truck", 0.6);
        let far = Detection::new(bx(30.0, 30.0, 40.0, 40.0), "airplane", 0.9);
        let r = DetectionResult::new("i", vec![near.clone(), far.clone()]);
        assert_eq!(select_cam_target(&r, &obj, 0.5, true), CamTarget::Detection(near.bbox));
        let r = DetectionResult::new("i", vec![far.clone()]);
        assert_eq!(select_cam_target(&r, &obj, 0.5, true), CamTarget::Detection(far.bbox));
        let r = DetectionResult::new("i", vec![]);
        assert_eq!(
            select_cam_target(&r, &obj, 0.5, true),
            CamTarget::GroundTruthBox(obj.bbox)
        );
        assert_eq!(select_cam_target(&r, &obj, 0.5, false), CamTarget::Degenerate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn heatmaps_are_normalized(seed in any::<u64>(), x in 2usize..20, y in 2usize..20) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = RasterImage::from_fn(32, 32, "p", |_, _| {
                let v = rng.random_range(0.0..1.0);
                [v, v, v]
            }).unwrap();
            let b = bx(x as f64, y as f64, x as f64 + 10.0, y as f64 + 8.0);
            let h = grad_cam(&img, &CamTarget::Detection(b), &mut BlobDetector::default()).unwrap();
            prop_assert!(h.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let max = h.values.fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(max == 0.0 || (max - 1.0).abs() < 1e-12);
        }
    }
}
