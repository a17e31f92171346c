use std::path::{Path, PathBuf};

use super::{bicubic_resize, from_float, load_png_f32, to_float, ImageError, ImageF32};

/// An HR image cropped to a multiple of the scale and its LR counterpart.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub name: String,
    pub hr: ImageF32,
    pub lr: ImageF32,
}

/// Bicubic `1/m` downscale, quantized through 8 bits like a stored LR file.
///
/// `hr` dimensions must be multiples of `m`.
pub fn degrade(hr: &ImageF32, m: usize) -> Result<ImageF32, ImageError> {
    if m == 0 || !hr.width.is_multiple_of(m) || !hr.height.is_multiple_of(m) {
        return Err(ImageError::Dimensions {
            width: hr.width,
            height: hr.height,
            msg: format!("not divisible by scale {m}"),
        });
    }
    let lr = bicubic_resize(hr, hr.width / m, hr.height / m);
    Ok(to_float(&from_float(&lr)))
}

/// PNG files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ImageError> {
    let dir = dir.as_ref();
    let io = |source| ImageError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(ImageError::EmptyDir {
            path: dir.display().to_string(),
        });
    }
    Ok(out)
}

/// Pairs an in-memory HR image with its LR version.
///
/// The HR image is cropped to the largest multiple of `m`. A supplied LR
/// image must measure exactly `1/m` of the cropped HR; otherwise the LR is
/// generated with [`degrade`].
pub fn make_pair(
    name: impl Into<String>,
    hr: &ImageF32,
    lr: Option<ImageF32>,
    m: usize,
) -> Result<ImagePair, ImageError> {
    let name = name.into();
    if hr.width < m || hr.height < m {
        return Err(ImageError::Dimensions {
            width: hr.width,
            height: hr.height,
            msg: format!("{name}: smaller than scale {m}"),
        });
    }
    let hr = hr.crop_to_multiple(m)?;
    let lr = match lr {
        Some(lr) => {
            if lr.width != hr.width / m || lr.height != hr.height / m {
                return Err(ImageError::LrSize {
                    name,
                    expected: (hr.width / m, hr.height / m),
                    found: (lr.width, lr.height),
                });
            }
            lr
        }
        None => degrade(&hr, m)?,
    };
    Ok(ImagePair { name, hr, lr })
}

/// Loads `hr_path` and, if `lr_dir` is given, the LR file of the same name.
pub fn load_pair(hr_path: &Path, lr_dir: Option<&Path>, m: usize) -> Result<ImagePair, ImageError> {
    let name = hr_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let hr = load_png_f32(hr_path)?;
    let lr = match lr_dir {
        Some(dir) => Some(load_png_f32(dir.join(&name))?),
        None => None,
    };
    make_pair(name, &hr, lr, m)
}
