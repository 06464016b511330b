//! Visual-quality and lip-sync metrics computable without pretrained
//! networks: PSNR, SSIM and landmark distance.

mod frames;
mod report;

pub use frames::{load_frame, load_frames, load_landmarks, parse_landmarks, FrameImage, LandmarkSet};
pub use report::{eval_report, EvalReport, UtteranceMetrics, LSE_NOTE};

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_shapes(a: &FrameImage, b: &FrameImage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape("image", &a.shape(), &b.shape()));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len() as f64;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / (sse / n)).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Separable valid-mode filtering of a `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM on the BT.601 luma of both images with an 11×11
/// Gaussian window (σ = 1.5), averaged over window positions fully inside
/// the image.
pub fn ssim(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (x, y) = (a.luma(), b.luma());
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let f = |v: &[f64]| filter_valid(v, h, w, &k);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (mx, my) = (f(&x), f(&y));
    let (sxx, syy, sxy) = (f(&prod(&x, &x)), f(&prod(&y, &y)), f(&prod(&x, &y)));
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Mean Euclidean distance between corresponding points after subtracting
/// each frame's centroid from its own points.
pub fn lmd(generated: &LandmarkSet, truth: &LandmarkSet) -> Result<f64> {
    let (g, t) = (generated.frames(), truth.frames());
    if g.len() != t.len() {
        return Err(Error::InvalidArgument(format!(
            "lmd: {} generated frames vs {} ground-truth frames",
            g.len(),
            t.len()
        )));
    }
    if g.is_empty() {
        return Err(Error::InvalidArgument("lmd: no frames".into()));
    }
    if generated.points() != truth.points() {
        return Err(Error::InvalidArgument(format!(
            "lmd: {} generated points vs {} ground-truth points",
            generated.points(),
            truth.points()
        )));
    }
    let centred = |f: &[(f64, f64)]| {
        let n = f.len() as f64;
        let (cx, cy) = f.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.0, sy + p.1));
        f.iter().map(|p| (p.0 - cx / n, p.1 - cy / n)).collect::<Vec<_>>()
    };
    let mut total = 0.0;
    for (fg, ft) in g.iter().zip(t) {
        for (p, q) in centred(fg).iter().zip(centred(ft)) {
            total += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        }
    }
    Ok(total / (g.len() * generated.points()) as f64)
}

#[cfg(test)]
mod tests;
