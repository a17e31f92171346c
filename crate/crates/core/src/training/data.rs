use std::path::Path;

use rand::Rng;

use crate::imaging::{list_pngs, load_pair, make_pair, ImageError, ImageF32, ImagePair};
use crate::tensor::{dihedral, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("dataset is empty")]
    Empty,
    #[error("no image admits a {patch}x{patch} LR crop (largest LR is {largest_w}x{largest_h})")]
    NoEligibleImage {
        patch: usize,
        largest_w: usize,
        largest_h: usize,
    },
}

/// HR/LR training pairs at a fixed scale, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    scale: usize,
    pairs: Vec<ImagePair>,
}

/// Where one batch sample was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pick {
    pub image: usize,
    pub lr_x: usize,
    pub lr_y: usize,
    pub hr_x: usize,
    pub hr_y: usize,
    pub transform: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub picks: Vec<Pick>,
}

impl Dataset {
    /// Reads every PNG in `hr_dir`; LR files come from `lr_dir` under the
    /// same names or are generated by bicubic degradation.
    pub fn load(hr_dir: &Path, lr_dir: Option<&Path>, scale: usize) -> Result<Self, DataError> {
        let pairs = list_pngs(hr_dir)?
            .iter()
            .map(|p| load_pair(p, lr_dir, scale))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_pairs(scale, pairs)
    }

    /// Builds a dataset from in-memory HR images with generated LR.
    pub fn from_hr_images(scale: usize, images: &[(String, ImageF32)]) -> Result<Self, DataError> {
        let pairs = images
            .iter()
            .map(|(name, hr)| make_pair(name.clone(), hr, None, scale))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_pairs(scale, pairs)
    }

    pub fn from_pairs(scale: usize, pairs: Vec<ImagePair>) -> Result<Self, DataError> {
        if pairs.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self { scale, pairs })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices of images whose LR side is at least `patch` in both axes.
    pub fn eligible(&self, patch: usize) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&i| self.pairs[i].lr.width >= patch && self.pairs[i].lr.height >= patch)
            .collect()
    }

    /// Like [`eligible`](Self::eligible), logging a warning for every image
    /// that is skipped and failing if none remains.
    pub fn check_patch(&self, patch: usize) -> Result<Vec<usize>, DataError> {
        let ok = self.eligible(patch);
        for (i, p) in self.pairs.iter().enumerate() {
            if !ok.contains(&i) {
                log::warn!(
                    "skipping {}: LR {}x{} is smaller than the {patch}x{patch} patch",
                    p.name,
                    p.lr.width,
                    p.lr.height
                );
            }
        }
        if ok.is_empty() {
            return Err(self.no_eligible(patch));
        }
        Ok(ok)
    }

    fn no_eligible(&self, patch: usize) -> DataError {
        DataError::NoEligibleImage {
            patch,
            largest_w: self.pairs.iter().map(|p| p.lr.width).max().unwrap_or(0),
            largest_h: self.pairs.iter().map(|p| p.lr.height).max().unwrap_or(0),
        }
    }
}

fn below(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n as u32) as usize
}

/// Draws `batch` aligned LR/HR crops.
///
/// Each sample picks an eligible image uniformly, then an LR corner
/// uniformly over all positions where the patch fits; the HR window starts
/// at `scale` times that corner. With `augment`, one of the eight dihedral
/// transforms is applied to both crops.
pub fn sample_batch(
    data: &Dataset,
    batch: usize,
    patch: usize,
    augment: bool,
    rng: &mut impl Rng,
) -> Result<Batch, DataError> {
    let eligible = data.eligible(patch);
    if eligible.is_empty() {
        return Err(data.no_eligible(patch));
    }
    let m = data.scale;
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    let mut picks = Vec::with_capacity(batch);
    for _ in 0..batch {
        let image = eligible[below(rng, eligible.len())];
        let pair = &data.pairs[image];
        let lr_x = below(rng, pair.lr.width - patch + 1);
        let lr_y = below(rng, pair.lr.height - patch + 1);
        let transform = if augment { below(rng, 8) } else { 0 };
        let (hr_x, hr_y) = (lr_x * m, lr_y * m);
        let lr = pair.lr.crop(lr_x, lr_y, patch, patch)?.to_tensor();
        let hr = pair.hr.crop(hr_x, hr_y, patch * m, patch * m)?.to_tensor();
        lrs.push(dihedral(&lr, transform).map_err(ImageError::from)?);
        hrs.push(dihedral(&hr, transform).map_err(ImageError::from)?);
        picks.push(Pick {
            image,
            lr_x,
            lr_y,
            hr_x,
            hr_y,
            transform,
        });
    }
    Ok(Batch {
        lr: Tensor::stack(&lrs).map_err(ImageError::from)?,
        hr: Tensor::stack(&hrs).map_err(ImageError::from)?,
        picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{bicubic_resize, ImageF32};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn smooth(w: usize, h: usize, phase: f32) -> ImageF32 {
        ImageF32::from_fn(w, h, |x, y, c| {
            0.5 + 0.4 * ((x as f32 * 0.21 + phase).sin() * (y as f32 * 0.17 + c as f32).cos())
        })
    }

    fn dataset() -> Dataset {
        Dataset::from_hr_images(
            2,
            &[
                ("a".into(), smooth(40, 36, 0.0)),
                ("b".into(), smooth(30, 50, 1.0)),
                ("tiny".into(), smooth(8, 8, 2.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn crops_are_aligned() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = sample_batch(&d, 16, 12, false, &mut rng).unwrap();
        assert_eq!(b.lr.shape().dims(), [16, 3, 12, 12]);
        assert_eq!(b.hr.shape().dims(), [16, 3, 24, 24]);
        for (n, p) in b.picks.iter().enumerate() {
            assert_ne!(p.image, 2, "undersized image must be skipped");
            assert_eq!((p.hr_x, p.hr_y), (2 * p.lr_x, 2 * p.lr_y));
            let pair = &d.pairs()[p.image];
            assert_eq!(b.lr.at(n, 1, 3, 5), pair.lr.at(p.lr_x + 5, p.lr_y + 3, 1));
            assert_eq!(b.hr.at(n, 2, 7, 1), pair.hr.at(p.hr_x + 1, p.hr_y + 7, 2));
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let d = dataset();
        for augment in [false, true] {
            let a = sample_batch(&d, 4, 10, augment, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = sample_batch(&d, 4, 10, augment, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(a.lr.data(), b.lr.data());
            assert_eq!(a.hr.data(), b.hr.data());
            assert_eq!(a.picks, b.picks);
        }
    }

    #[test]
    fn augmentation_transforms_both_crops_alike() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = sample_batch(&d, 24, 10, true, &mut rng).unwrap();
        assert!(b.picks.iter().any(|p| p.transform != 0));
        for (n, p) in b.picks.iter().enumerate() {
            let pair = &d.pairs()[p.image];
            let lr = pair.lr.crop(p.lr_x, p.lr_y, 10, 10).unwrap().to_tensor();
            let hr = pair.hr.crop(p.hr_x, p.hr_y, 20, 20).unwrap().to_tensor();
            assert_eq!(
                b.lr.item(n).data(),
                dihedral(&lr, p.transform).unwrap().data()
            );
            assert_eq!(
                b.hr.item(n).data(),
                dihedral(&hr, p.transform).unwrap().data()
            );
        }
    }

    #[test]
    fn hr_crop_downscales_to_lr_crop() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_batch(&d, 6, 12, false, &mut rng).unwrap();
        for (n, p) in b.picks.iter().enumerate() {
            let pair = &d.pairs()[p.image];
            let hr = pair.hr.crop(p.hr_x, p.hr_y, 24, 24).unwrap();
            let down = bicubic_resize(&hr, 12, 12);
            // The interior sees the same taps as the full-image degradation;
            // the crop border differs by edge clamping.
            for y in 3..9 {
                for x in 3..9 {
                    for c in 0..3 {
                        let diff = (down.at(x, y, c) - b.lr.at(n, c, y, x)).abs();
                        assert!(diff <= 0.5 / 255.0 + 1e-6, "diff {diff}");
                    }
                }
            }
        }
    }

    #[test]
    fn no_eligible_image_is_an_error() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch(&d, 1, 40, false, &mut rng),
            Err(DataError::NoEligibleImage { patch: 40, .. })
        ));
        assert!(d.check_patch(40).is_err());
        assert_eq!(d.check_patch(12).unwrap(), vec![0, 1]);
        assert!(matches!(
            Dataset::from_pairs(2, vec![]),
            Err(DataError::Empty)
        ));
    }
}
