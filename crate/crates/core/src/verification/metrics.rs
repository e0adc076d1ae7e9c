use ndarray::{Array2, Array3, Axis};

use crate::error::{BackendError, Error, Result};
use crate::imaging::RasterImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_dims(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(())
}

pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.pixels().len() as f64;
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / n)
}

/// Peak value 1.0. Identical images give `f64::INFINITY`.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(src: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = src.dim();
    let rows = Array2::from_shape_fn((h, w - k + 1), |(y, x)| {
        taps.iter().enumerate().map(|(i, t)| t * src[[y, x + i]]).sum::<f64>()
    });
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(y, x)| {
        taps.iter().enumerate().map(|(i, t)| t * rows[[y + i, x]]).sum::<f64>()
    })
}

/// Single-scale SSIM on luma, averaged over every fully-inside window.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let x = a.luma();
    let y = b.luma();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let mxx = filter_valid(&(&x * &x), &taps);
    let myy = filter_valid(&(&y * &y), &taps);
    let mxy = filter_valid(&(&x * &y), &taps);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let vx = mxx.as_slice().unwrap()[i] - ux * ux;
        let vy = myy.as_slice().unwrap()[i] - uy * uy;
        let cxy = mxy.as_slice().unwrap()[i] - ux * uy;
        total += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
    }
    Ok(total / mx.len() as f64)
}

/// Fixed feature extractor for LPIPS. Each layer is channels x rows x cols.
pub trait PerceptualBackend {
    fn id(&self) -> &str;
    fn features(&mut self, image: &RasterImage) -> std::result::Result<Vec<Array3<f64>>, BackendError>;
}

/// One layer: the raw RGB channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl PerceptualBackend for IdentityFeatures {
    fn id(&self) -> &str {
        "identity"
    }

    fn features(&mut self, image: &RasterImage) -> std::result::Result<Vec<Array3<f64>>, BackendError> {
        Ok(vec![image
            .pixels()
            .clone()
            .permuted_axes([2, 0, 1])
            .as_standard_layout()
            .to_owned()])
    }
}

/// Three layers at strides 1, 2, 4: centred colour plus luma gradients,
/// average-pooled. A stand-in for a pretrained network at desk scale.
#[derive(Debug, Clone, Copy, Default)]
pub struct PooledPyramid;

impl PerceptualBackend for PooledPyramid {
    fn id(&self) -> &str {
        "pooled-pyramid"
    }

    fn features(&mut self, image: &RasterImage) -> std::result::Result<Vec<Array3<f64>>, BackendError> {
        let (w, h) = image.dims();
        let px = image.pixels();
        let l = image.luma();
        let base = Array3::from_shape_fn((5, h, w), |(c, y, x)| match c {
            0..=2 => px[[y, x, c]] - 0.5,
            3 => l[[y, (x + 1).min(w - 1)]] - l[[y, x]],
            _ => l[[(y + 1).min(h - 1), x]] - l[[y, x]],
        });
        Ok([1, 2, 4].iter().map(|&s| avg_pool(&base, s)).collect())
    }
}

fn avg_pool(f: &Array3<f64>, s: usize) -> Array3<f64> {
    let (c, h, w) = f.dim();
    let (ph, pw) = (h.div_ceil(s), w.div_ceil(s));
    Array3::from_shape_fn((c, ph, pw), |(k, y, x)| {
        let ys = y * s..((y + 1) * s).min(h);
        let xs = x * s..((x + 1) * s).min(w);
        let n = (ys.len() * xs.len()) as f64;
        let mut sum = 0.0;
        for yy in ys {
            for xx in xs.clone() {
                sum += f[[k, yy, xx]];
            }
        }
        sum / n
    })
}

/// Same epsilon as the reference LPIPS implementation.
const UNIT_EPS: f64 = 1e-10;

/// Sum over layers of the spatial mean of squared differences between
/// channel-unit-normalized feature vectors.
pub fn lpips(a: &RasterImage, b: &RasterImage, p: &mut dyn PerceptualBackend) -> Result<f64> {
    same_dims(a, b)?;
    let fa = p.features(a).map_err(|e| Error::backend(a.source_id(), e))?;
    let fb = p.features(b).map_err(|e| Error::backend(b.source_id(), e))?;
    if fa.len() != fb.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} layers", fa.len(), fb.len())));
    }
    let mut total = 0.0;
    for (la, lb) in fa.iter().zip(&fb) {
        if la.dim() != lb.dim() {
            return Err(Error::ShapeMismatch(format!("layer {:?} vs {:?}", la.dim(), lb.dim())));
        }
        let na = unit_normalize(la);
        let nb = unit_normalize(lb);
        let d = (&na - &nb).mapv(|v| v * v).sum_axis(Axis(0));
        total += d.mean().unwrap_or(0.0);
    }
    Ok(total)
}

fn unit_normalize(f: &Array3<f64>) -> Array3<f64> {
    let norm = f.mapv(|v| v * v).sum_axis(Axis(0)).mapv(f64::sqrt);
    let mut out = f.clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        ch.zip_mut_with(&norm, |v, n| *v /= n + UNIT_EPS);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::from_fn(w, h, format!("r{seed}"), |_, _| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ]
        })
        .unwrap()
    }

    /// Direct per-window SSIM with explicit 2-D weights.
    fn ssim_oracle(a: &RasterImage, b: &RasterImage) -> f64 {
        let (x, y) = (a.luma(), b.luma());
        let (h, w) = x.dim();
        let g = gaussian_taps(11, 1.5);
        let mut total = 0.0;
        let mut n = 0;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut ux, mut uy) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        ux += g[i] * g[j] * x[[oy + i, ox + j]];
                        uy += g[i] * g[j] * y[[oy + i, ox + j]];
                    }
                }
                let (mut vx, mut vy, mut c) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        let dx = x[[oy + i, ox + j]] - ux;
                        let dy = y[[oy + i, ox + j]] - uy;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        c += wt * dx * dy;
                    }
                }
                total += ((2.0 * ux * uy + 1e-4) * (2.0 * c + 9e-4)) / ((ux * ux + uy * uy + 1e-4) * (vx + vy + 9e-4));
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn mse_examples() {
        let z = RasterImage::filled(8, 8, [0.0; 3], "z").unwrap();
        let o = RasterImage::filled(8, 8, [1.0; 3], "o").unwrap();
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        let (a, b) = (random_image(8, 8, 1), random_image(8, 8, 2));
        let mut s = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    s += (a.get(x, y)[c] - b.get(x, y)[c]).powi(2);
                }
            }
        }
        assert!((mse(&a, &b).unwrap() - s / 192.0).abs() < 1e-12);
        assert!(matches!(
            mse(&a, &random_image(9, 8, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let seq: Vec<f64> = [1e-4, 1e-3, 0.02, 0.5, 1.0].iter().map(|&m| psnr_from_mse(m)).collect();
        assert!(seq.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn ssim_examples() {
        let a = random_image(24, 20, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = RasterImage::new(a.pixels().mapv(|v| 1.0 - v), "neg").unwrap();
        let s = ssim(&a, &neg).unwrap();
        assert!(s < 1.0);
        assert!((s - ssim_oracle(&a, &neg)).abs() < 1e-6);
        let c = RasterImage::filled(16, 16, [0.3; 3], "c").unwrap();
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        let small = random_image(10, 16, 0);
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn separable_matches_oracle_on_random_pairs() {
        for seed in 0..5 {
            let (a, b) = (random_image(32, 32, seed), random_image(32, 32, seed + 100));
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn lpips_identity_oracle() {
        // 8x8 stands in for the 4x4 case: RasterImage needs sides of at least 8
        let (a, b) = (random_image(8, 8, 7), random_image(8, 8, 8));
        let mut want = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let (p, q) = (a.get(x, y), b.get(x, y));
                let np = (p.iter().map(|v| v * v).sum::<f64>()).sqrt() + 1e-10;
                let nq = (q.iter().map(|v| v * v).sum::<f64>()).sqrt() + 1e-10;
                want += (0..3).map(|c| (p[c] / np - q[c] / nq).powi(2)).sum::<f64>();
            }
        }
        want /= 64.0;
        let got = lpips(&a, &b, &mut IdentityFeatures).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert_eq!(lpips(&a, &a, &mut IdentityFeatures).unwrap(), 0.0);
    }

    #[test]
    fn pyramid_has_three_layers() {
        let f = PooledPyramid.features(&random_image(10, 9, 0)).unwrap();
        let dims: Vec<_> = f.iter().map(|l| l.dim()).collect();
        assert_eq!(dims, vec![(5, 9, 10), (5, 5, 5), (5, 3, 3)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn metrics_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let (a, b) = (random_image(16, 16, s1), random_image(16, 16, s2));
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            let l1 = lpips(&a, &b, &mut PooledPyramid).unwrap();
            let l2 = lpips(&b, &a, &mut PooledPyramid).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert!(l1 >= 0.0);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
