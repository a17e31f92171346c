use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{psnr_from_mse, ssim, MetricError};
use crate::imaging::{
    bicubic_resize, channel_plane, list_pngs, load_pair, rgb_to_y601, shave, ImageError, ImageF32,
    Plane,
};
use crate::metrics::ensemble::self_ensemble;
use crate::model::{Drn, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("upscaler works at x{built}, evaluation asked for x{asked}")]
    ScaleMismatch { built: usize, asked: usize },
    #[error("upscaler returned {found:?}, expected {expected:?}")]
    OutputSize {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("every image failed to evaluate")]
    AllFailed(Vec<EvalFailure>),
}

/// Anything that maps an LR image to an image `m` times larger.
pub trait Upscaler: Sync {
    fn upscale(&self, lr: &ImageF32, m: usize) -> Result<ImageF32, EvalError>;
}

/// Plain bicubic interpolation.
#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicUpscaler;

impl Upscaler for BicubicUpscaler {
    fn upscale(&self, lr: &ImageF32, m: usize) -> Result<ImageF32, EvalError> {
        Ok(bicubic_resize(lr, lr.width * m, lr.height * m))
    }
}

/// A trained network, optionally with the eight-way self-ensemble.
pub struct ModelUpscaler<'a> {
    pub model: &'a Drn<f32>,
    pub self_ensemble: bool,
}

impl Upscaler for ModelUpscaler<'_> {
    fn upscale(&self, lr: &ImageF32, m: usize) -> Result<ImageF32, EvalError> {
        if self.model.scale() != m {
            return Err(EvalError::ScaleMismatch {
                built: self.model.scale(),
                asked: m,
            });
        }
        let x = lr.to_tensor();
        let y = if self.self_ensemble {
            self_ensemble(self.model, &x)?
        } else {
            self.model.infer(&x)?
        };
        Ok(ImageF32::from_tensor(&y, 0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPlane {
    /// BT.601 luma.
    #[default]
    Y,
    /// All three channels: PSNR over the pooled error, SSIM averaged.
    Rgb,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub plane: EvalPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalFailure {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub scale: usize,
    pub plane: EvalPlane,
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub failures: Vec<EvalFailure>,
}

impl EvalResult {
    /// Report lines `name psnr ssim`, then `MEAN psnr ssim`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in &self.images {
            s.push_str(&format!("{} {:.4} {:.4}\n", i.name, i.psnr, i.ssim));
        }
        s.push_str(&format!(
            "MEAN {:.4} {:.4}\n",
            self.mean_psnr, self.mean_ssim
        ));
        s
    }
}

fn planes(img: &ImageF32, plane: EvalPlane) -> Vec<Plane> {
    match plane {
        EvalPlane::Y => vec![rgb_to_y601(img)],
        EvalPlane::Rgb => (0..3).map(|c| channel_plane(img, c)).collect(),
    }
}

/// PSNR and SSIM of `sr` against `hr` after shaving `border` pixels.
pub fn score(
    sr: &ImageF32,
    hr: &ImageF32,
    border: usize,
    plane: EvalPlane,
) -> Result<(f64, f64), EvalError> {
    if (sr.width, sr.height) != (hr.width, hr.height) {
        return Err(EvalError::OutputSize {
            expected: (hr.width, hr.height),
            found: (sr.width, sr.height),
        });
    }
    let (mut sq, mut count, mut ssim_sum) = (0.0, 0usize, 0.0);
    let ps = planes(&sr.clamped(), plane);
    let ph = planes(hr, plane);
    for (a, b) in ps.iter().zip(&ph) {
        let a = shave(a, border)?;
        let b = shave(b, border)?;
        sq += a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        count += a.data.len();
        ssim_sum += ssim(&a, &b)?;
    }
    Ok((psnr_from_mse(sq / count as f64), ssim_sum / ps.len() as f64))
}

fn eval_one(
    upscaler: &dyn Upscaler,
    path: &Path,
    lr_dir: Option<&Path>,
    m: usize,
    opts: EvalOptions,
) -> Result<ImageScore, EvalError> {
    let pair = load_pair(path, lr_dir, m)?;
    let sr = upscaler.upscale(&pair.lr, m)?;
    let (psnr, ssim) = score(&sr, &pair.hr, m, opts.plane)?;
    Ok(ImageScore {
        name: pair.name,
        psnr,
        ssim,
    })
}

/// Scores `upscaler` on every PNG in `hr_dir`, in file-name order.
///
/// Each HR image is cropped to a multiple of `m`; its LR comes from
/// `lr_dir` or bicubic degradation. The upscaled result is clamped,
/// converted to the chosen plane and shaved by `m` pixels. Images that
/// fail are listed in `failures` and left out of the means.
pub fn evaluate(
    upscaler: &dyn Upscaler,
    hr_dir: &Path,
    lr_dir: Option<&Path>,
    m: usize,
    opts: EvalOptions,
) -> Result<EvalResult, EvalError> {
    let paths = list_pngs(hr_dir)?;
    let outcomes: Vec<_> = paths
        .par_iter()
        .map(|p| eval_one(upscaler, p, lr_dir, m, opts))
        .collect();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (path, outcome) in paths.iter().zip(outcomes) {
        match outcome {
            Ok(s) => images.push(s),
            Err(e) => failures.push(EvalFailure {
                name: path
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                error: e.to_string(),
            }),
        }
    }
    if images.is_empty() {
        return Err(EvalError::AllFailed(failures));
    }
    let n = images.len() as f64;
    Ok(EvalResult {
        scale: m,
        plane: opts.plane,
        mean_psnr: images.iter().map(|i| i.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|i| i.ssim).sum::<f64>() / n,
        images,
        failures,
    })
}
