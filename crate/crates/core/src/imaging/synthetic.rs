use super::RasterImage;

/// Small street scene with one bright car-like blob on a darker road,
/// ground and sky. Deterministic; useful as a desk-scale seed image.
pub fn street_scene(width: usize, height: usize) -> RasterImage {
    let (w, h) = (width as f64, height as f64);
    let car = (
        (0.3 * w).round() as usize,
        (0.55 * h).round() as usize,
        (0.7 * w).round() as usize,
        (0.75 * h).round() as usize,
    );
    let horizon = 0.45 * h;
    RasterImage::from_fn(width, height, "seed", |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        if (car.0..car.2).contains(&x) && (car.1..car.3).contains(&y) {
            let shade = 0.02 * ((x + y) % 3) as f64;
            return [0.93 - shade, 0.93 - shade, 0.95 - shade];
        }
        if fy < horizon {
            let g = 0.1 * fy / horizon;
            return [0.22 + g, 0.28 + g, 0.40 + g];
        }
        let depth = (fy - horizon) / (h - horizon);
        let half = 0.08 * w + depth * 0.35 * w;
        if (fx - w / 2.0).abs() < half {
            let stripe = (fx - w / 2.0).abs() < 0.6 && (y / 3) % 2 == 0;
            let v = if stripe { 0.45 } else { 0.24 };
            [v, v, v + 0.01]
        } else {
            [0.14, 0.26 + 0.04 * depth, 0.12]
        }
    })
    .expect("scene values are in range")
}
