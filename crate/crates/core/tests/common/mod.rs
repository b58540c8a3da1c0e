//! Synthetic structured test images shared by the integration tests.
#![allow(dead_code)]

use sdarecon::imaging::{extract_patches, GrayImage};
use sdarecon::numeric::{Matrix, Prng};

/// A smooth, edge-bearing grayscale scene: a linear ramp, a few Gaussian
/// blobs and one soft-edged half-plane, rescaled to `[0, 1]`.
pub fn scene(height: usize, width: usize, rng: &mut Prng) -> GrayImage {
    let (h, w) = (height as f64, width as f64);
    let ramp = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.uniform(0.0, h),
                rng.uniform(0.0, w),
                rng.uniform(0.05, 0.25) * h.min(w),
                rng.uniform(-1.0, 1.0),
            )
        })
        .collect();
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (nx, ny) = (angle.cos(), angle.sin());
    let offset = rng.uniform(0.3, 0.7);
    let step = rng.uniform(0.5, 1.5);

    let mut raw = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / h, c as f64 / w);
            let mut v = ramp.0 * y + ramp.1 * x;
            for &(br, bc, s, a) in &blobs {
                let d2 = ((r as f64 - br).powi(2) + (c as f64 - bc).powi(2)) / (s * s);
                v += a * (-0.5 * d2).exp();
            }
            let side = (x - 0.5) * nx + (y - 0.5) * ny + 0.5 - offset;
            v += step / (1.0 + (-side * 60.0).exp());
            raw.push(v);
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    GrayImage::new(
        height,
        width,
        raw.into_iter()
            .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect(),
    )
    .unwrap()
}

/// Pixels drawn independently and uniformly from `[0, 1]`.
pub fn noise_image(height: usize, width: usize, rng: &mut Prng) -> GrayImage {
    GrayImage::new(
        height,
        width,
        (0..height * width).map(|_| rng.next_f64()).collect(),
    )
    .unwrap()
}

/// `count` non-overlapping patches cut from fresh scenes, one per row.
pub fn scene_patches(count: usize, patch: usize, rng: &mut Prng) -> Matrix {
    let side = 256.max(patch);
    let mut data = Vec::with_capacity(count * patch * patch);
    let mut have = 0;
    while have < count {
        let img = scene(side, side, rng);
        for p in extract_patches(&img, patch, patch).unwrap().patches {
            if have == count {
                break;
            }
            data.extend_from_slice(&p);
            have += 1;
        }
    }
    Matrix::from_vec(count, patch * patch, data).unwrap()
}

pub fn uniform_rows(rows: usize, cols: usize, rng: &mut Prng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.next_f64()).collect(),
    )
    .unwrap()
}
