//! Image-quality metrics over linear [0, 1] images: PSNR and SSIM with the
//! standard 11×11 Gaussian window (σ = 1.5, K1 = 0.01, K2 = 0.03, unit
//! dynamic range).

use crate::error::{Error, Result};
use crate::img::ImageF;

/// Reported PSNR for a perfect (or numerically perfect) match.
pub const PSNR_SENTINEL: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR in dB for a mean squared error against unit dynamic range, capped
/// at the sentinel to keep reports finite.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 1e-12 {
        return PSNR_SENTINEL;
    }
    (-10.0 * mse.log10()).min(PSNR_SENTINEL)
}

pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    Ok(psnr_from_mse(a.mse(b)?))
}

/// Mean SSIM over the valid (fully covered) window positions, averaged over
/// the three channels. Images must be at least the window size.
pub fn ssim(a: &ImageF, b: &ImageF) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Config(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel();
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;

    for cy in half..h - half {
        for cx in half..w - half {
            for ch in 0..3 {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = kernel[ky] * kernel[kx];
                        let x = a.get((cx + kx - half) as u32, (cy + ky - half) as u32)[ch];
                        let y = b.get((cx + kx - half) as u32, (cy + ky - half) as u32)[ch];
                        mx += wgt * x;
                        my += wgt * y;
                        mxx += wgt * x * x;
                        myy += wgt * y * y;
                        mxy += wgt * x * y;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let value = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                total += value;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}
