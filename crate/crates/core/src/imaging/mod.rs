//! Image files, float conversion, bicubic resampling and luma planes.

mod pairs;
mod plane;
mod resize;

use std::path::Path;

pub use pairs::{degrade, list_pngs, load_pair, make_pair, ImagePair};
pub use plane::{channel_plane, rgb_to_y601, shave, Plane};
pub use resize::bicubic_resize;

use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode: {msg}")]
    Decode { path: String, msg: String },
    #[error("{path}: unsupported sample depth of {bits} bits (only 8-bit PNG is accepted)")]
    UnsupportedDepth { path: String, bits: u16 },
    #[error("{path}: cannot encode: {msg}")]
    Encode { path: String, msg: String },
    #[error("cannot shave {border} pixels from a {width}x{height} plane")]
    OverShave {
        border: usize,
        width: usize,
        height: usize,
    },
    #[error("image dimensions {width}x{height} are invalid: {msg}")]
    Dimensions {
        width: usize,
        height: usize,
        msg: String,
    },
    #[error("{path}: no PNG files")]
    EmptyDir { path: String },
    #[error("{name}: LR image is {found:?}, HR implies {expected:?}")]
    LrSize {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// 8-bit RGB image, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// RGB image with unit-interval samples, interleaved, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 || len != 3 * width * height {
        return Err(ImageError::Dimensions {
            width,
            height,
            msg: format!("expected {} samples, got {len}", 3 * width * height),
        });
    }
    Ok(())
}

impl ImageF32 {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Copies out the `w x h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageF32, ImageError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::Dimensions {
                width: self.width,
                height: self.height,
                msg: format!("crop {w}x{h} at ({x0}, {y0}) out of bounds"),
            });
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + 3 * w]);
        }
        Ok(ImageF32 {
            width: w,
            height: h,
            data,
        })
    }

    /// Largest top-left crop whose sides are multiples of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<ImageF32, ImageError> {
        let (w, h) = (self.width / m * m, self.height / m * m);
        self.crop(0, 0, w, h)
    }

    pub fn clamped(&self) -> ImageF32 {
        ImageF32 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// `(1, 3, h, w)` planar tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            self.data[(y * w + x) * 3 + c]
        })
        .expect("image dimensions are nonzero")
    }

    /// Batch item `n` of a 3-channel tensor, values copied as is.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<ImageF32, ImageError> {
        let s = t.shape();
        if s.c != 3 {
            return Err(TensorError::DimMismatch {
                op: "ImageF32::from_tensor",
                axis: crate::tensor::Axis::Channel,
                expected: 3,
                found: s.c,
            }
            .into());
        }
        Ok(ImageF32::from_fn(s.w, s.h, |x, y, c| t.at(n, c, y, x)))
    }
}

/// Decodes an 8-bit PNG. Grayscale is replicated to RGB, alpha dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageU8, ImageError> {
    use image::{DynamicImage, ImageReader};
    let path = path.as_ref();
    let p = path.display().to_string();
    let reader = ImageReader::open(path)
        .map_err(|source| ImageError::Io {
            path: p.clone(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageError::Io {
            path: p.clone(),
            source,
        })?;
    let img = reader.decode().map_err(|e| ImageError::Decode {
        path: p.clone(),
        msg: e.to_string(),
    })?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(ImageError::UnsupportedDepth {
                path: p,
                bits: other.color().bits_per_pixel() / other.color().channel_count() as u16,
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ImageU8::new(w, h, rgb.into_raw())
}

/// Encodes as an 8-bit RGB PNG.
pub fn save_png(img: &ImageU8, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| ImageError::Encode {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn to_float(img: &ImageU8) -> ImageF32 {
    ImageF32 {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v as f32 / 255.0).collect(),
    }
}

/// Clamps to `[0, 1]`, scales by 255 and rounds half away from zero.
pub fn from_float(img: &ImageF32) -> ImageU8 {
    ImageU8 {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
}

/// Reads a PNG straight into unit-interval floats.
pub fn load_png_f32(path: impl AsRef<Path>) -> Result<ImageF32, ImageError> {
    load_png(path).map(|img| to_float(&img))
}
