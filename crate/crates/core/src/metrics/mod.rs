//! Image quality metrics, the self-ensemble wrapper and dataset evaluation.

mod ensemble;
mod eval;

pub use ensemble::{self_ensemble, self_ensemble_with};
pub use eval::{
    evaluate, score, BicubicUpscaler, EvalError, EvalFailure, EvalOptions, EvalPlane, EvalResult,
    ImageScore, ModelUpscaler, Upscaler,
};

use crate::imaging::Plane;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("plane sizes differ: {a:?} vs {b:?}")]
    SizeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("plane {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { width: usize, height: usize },
}

fn same_size(a: &Plane, b: &Plane) -> Result<(), MetricError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricError::SizeMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    Ok(())
}

/// Mean squared difference of 0..255 planes.
pub fn mse(a: &Plane, b: &Plane) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// PSNR in dB for the given mean squared error, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// `10 log10(255^2 / MSE)`, capped at [`PSNR_CAP`] when MSE < 1e-10.
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64, MetricError> {
    mse(a, b).map(psnr_from_mse)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-mode separable filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let src = &data[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = src.iter().zip(taps).map(|(v, t)| v * t).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|k| rows[(y + k) * ow + x] * taps[k])
                .sum();
        }
    }
    out
}

/// Mean SSIM over every window position fully inside the plane, with an
/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and L = 255.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
        });
    }
    let taps = gaussian_taps();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(&a.data, w, h, &taps);
    let mu_b = filter_valid(&b.data, w, h, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}
