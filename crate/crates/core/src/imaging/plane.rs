use super::{ImageError, ImageF32};

/// Single-channel plane on the 0..255 scale, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// ITU-R BT.601 studio-swing luma: `16 + 65.481 R + 128.553 G + 24.966 B`
/// for unit-interval RGB, giving values in `[16, 235]`.
pub fn rgb_to_y601(img: &ImageF32) -> Plane {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| 65.481 * p[0] as f64 + 128.553 * p[1] as f64 + 24.966 * p[2] as f64 + 16.0)
        .collect();
    Plane::new(img.width, img.height, data)
}

/// One RGB channel scaled to 0..255.
pub fn channel_plane(img: &ImageF32, c: usize) -> Plane {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| p[c] as f64 * 255.0)
        .collect();
    Plane::new(img.width, img.height, data)
}

/// Drops `border` pixels from every side.
pub fn shave(plane: &Plane, border: usize) -> Result<Plane, ImageError> {
    if 2 * border >= plane.width.min(plane.height) {
        return Err(ImageError::OverShave {
            border,
            width: plane.width,
            height: plane.height,
        });
    }
    let (w, h) = (plane.width - 2 * border, plane.height - 2 * border);
    let mut data = Vec::with_capacity(w * h);
    for y in border..border + h {
        let row = y * plane.width;
        data.extend_from_slice(&plane.data[row + border..row + border + w]);
    }
    Ok(Plane::new(w, h, data))
}
