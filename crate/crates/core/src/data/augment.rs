use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SlicePair;
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

/// Ranges for the random in-plane similarity transform applied to training
/// slices. Shifts are fractions of the slice height / width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub scale_range: (f64, f64),
    pub rotation_range: (f64, f64),
    pub shift_range: [(f64, f64); 2],
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.9, 1.1),
            rotation_range: (-15.0, 15.0),
            shift_range: [(-0.1, 0.1), (-0.1, 0.1)],
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn identity(seed: u64) -> Self {
        Self {
            scale_range: (1.0, 1.0),
            rotation_range: (0.0, 0.0),
            shift_range: [(0.0, 0.0), (0.0, 0.0)],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 {
            return Err(Error::config("augmentation.scale_range", "must be a positive interval lo <= hi"));
        }
        if !ordered(self.rotation_range) {
            return Err(Error::config("augmentation.rotation_range", "must be an interval lo <= hi"));
        }
        if !self.shift_range.iter().all(|&r| ordered(r)) {
            return Err(Error::config("augmentation.shift_range", "must be intervals lo <= hi"));
        }
        Ok(())
    }

    /// The transform used for sample `draw_index`; depends on nothing else.
    pub fn draw(&self, draw_index: u64) -> AffineDraw {
        let mut rng = keyed(self.seed, Purpose::Augment, draw_index);
        let mut sample = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        AffineDraw {
            scale: sample(self.scale_range),
            rotation_deg: sample(self.rotation_range),
            shift: [sample(self.shift_range[0]), sample(self.shift_range[1])],
        }
    }
}

/// One sampled transform: scale and rotate about the slice centre, then
/// shift by a fraction of the slice size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub scale: f64,
    pub rotation_deg: f64,
    pub shift: [f64; 2],
}

impl AffineDraw {
    /// Maps an output pixel to its source location (inverse transform).
    fn source(&self, (h, w): (usize, usize)) -> impl Fn(usize, usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (ty, tx) = (self.shift[0] * h as f64, self.shift[1] * w as f64);
        let theta = self.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let inv_s = 1.0 / self.scale;
        move |i, j| {
            let dy = (i as f64 - cy - ty) * inv_s;
            let dx = (j as f64 - cx - tx) * inv_s;
            (cos * dy + sin * dx + cy, -sin * dy + cos * dx + cx)
        }
    }

    /// Bilinear resampling with zero padding.
    pub fn apply_bilinear(&self, img: &Array2<f32>) -> Array2<f32> {
        let (h, w) = img.dim();
        let src = self.source((h, w));
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                img[[y as usize, x as usize]] as f64
            }
        };
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (sy, sx) = src(i, j);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let mut v = at(y0, x0) * (1.0 - fy) * (1.0 - fx);
            if fx != 0.0 {
                v += at(y0, x0 + 1) * (1.0 - fy) * fx;
            }
            if fy != 0.0 {
                v += at(y0 + 1, x0) * fy * (1.0 - fx);
                if fx != 0.0 {
                    v += at(y0 + 1, x0 + 1) * fy * fx;
                }
            }
            (v as f32).clamp(0.0, 1.0)
        })
    }

    /// Nearest-neighbour resampling with zero padding; preserves labels.
    pub fn apply_nearest(&self, mask: &Array2<u8>) -> Array2<u8> {
        let (h, w) = mask.dim();
        let src = self.source((h, w));
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (sy, sx) = src(i, j);
            let (y, x) = (sy.round(), sx.round());
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                0
            } else {
                mask[[y as usize, x as usize]]
            }
        })
    }
}

/// Applies draw `draw_index` of `cfg` to the image (bilinear) and mask
/// (nearest neighbour) of `p`.
pub fn augment(p: &SlicePair, cfg: &AugmentationConfig, draw_index: u64) -> SlicePair {
    let t = cfg.draw(draw_index);
    SlicePair {
        image: t.apply_bilinear(&p.image),
        mask: t.apply_nearest(&p.mask),
        subject_id: p.subject_id.clone(),
        slice_index: p.slice_index,
    }
}

/// Mask-only variant of [`augment`] (auto-encoder pre-training).
pub fn augment_mask(mask: &Array2<u8>, cfg: &AugmentationConfig, draw_index: u64) -> Array2<u8> {
    cfg.draw(draw_index).apply_nearest(mask)
}
