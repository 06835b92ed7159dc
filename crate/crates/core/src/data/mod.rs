//! Volumes, masks, slices and everything that produces them: the synthetic
//! benchmark generator, slice extraction, 2-d augmentation, leave-one-out
//! splits and the `.vol` container.

mod augment;
mod io;
mod split;
mod synthetic;

use ndarray::{Array2, Array3, Axis};
use crate::{Error, Result};

pub use augment::{augment, augment_mask, AffineDraw, AugmentationConfig};
pub use io::{
    load_dataset, load_mask, load_volume, save_dataset, save_mask, save_slice_png, save_volume, Dataset,
    IMAGE_FILE, MASK_FILE,
};
pub(crate) use io::subject_dirs;
pub use split::{leave_one_out_splits, Split};
pub use synthetic::{generate_synthetic_dataset, generate_subject, BlobParams, DistractorParams, SyntheticConfig};

/// Physical voxel size in millimetres along (depth, height, width).
pub type Spacing = [f64; 3];

fn check_spacing(spacing: &Spacing) -> Result<()> {
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Validation(format!("spacing must be strictly positive, got {spacing:?}")));
    }
    Ok(())
}

fn check_dims(dims: (usize, usize, usize)) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::Validation(format!("volume dimensions must be >= 1, got {dims:?}")));
    }
    Ok(())
}

/// Intensity volume, values normalized to `[0, 1]`, indexed `(z, y, x)`
/// with `z` the axial slice axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Array3<f32>,
    spacing: Spacing,
    subject_id: String,
}

impl Volume {
    pub fn new(voxels: Array3<f32>, spacing: Spacing, subject_id: impl Into<String>) -> Result<Self> {
        check_dims(voxels.dim())?;
        check_spacing(&spacing)?;
        if let Some(v) = voxels.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Validation(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            voxels: voxels.as_standard_layout().into_owned(),
            spacing,
            subject_id: subject_id.into(),
        })
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }
}

/// Binary label volume (`0` background, `1` target).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    voxels: Array3<u8>,
    spacing: Spacing,
    subject_id: String,
}

impl MaskVolume {
    pub fn new(voxels: Array3<u8>, spacing: Spacing, subject_id: impl Into<String>) -> Result<Self> {
        check_dims(voxels.dim())?;
        check_spacing(&spacing)?;
        if let Some(v) = voxels.iter().find(|v| **v > 1) {
            return Err(Error::Validation(format!("mask contains label {v}, expected 0 or 1")));
        }
        Ok(Self {
            voxels: voxels.as_standard_layout().into_owned(),
            spacing,
            subject_id: subject_id.into(),
        })
    }

    pub fn voxels(&self) -> &Array3<u8> {
        &self.voxels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.iter().all(|&v| v == 0)
    }

    pub fn with_voxels(&self, voxels: Array3<u8>) -> Result<Self> {
        Self::new(voxels, self.spacing, self.subject_id.clone())
    }
}

/// One axial slice `x` with its label image `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub image: Array2<f32>,
    pub mask: Array2<u8>,
    pub subject_id: String,
    pub slice_index: usize,
}

/// Splits a paired volume into its axial slices, in ascending `slice_index`.
pub fn extract_slices(v: &Volume, m: &MaskVolume) -> Result<Vec<SlicePair>> {
    if v.dim() != m.dim() {
        return Err(Error::Shape(format!("image {:?} vs mask {:?}", v.dim(), m.dim())));
    }
    Ok(v.voxels
        .axis_iter(Axis(0))
        .zip(m.voxels.axis_iter(Axis(0)))
        .enumerate()
        .map(|(k, (img, mask))| SlicePair {
            image: img.to_owned(),
            mask: mask.to_owned(),
            subject_id: v.subject_id.clone(),
            slice_index: k,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_come_out_in_order() {
        let v = Volume::new(Array3::from_elem((16, 8, 4), 0.5), [1.0; 3], "a").unwrap();
        let m = MaskVolume::new(Array3::zeros((16, 8, 4)), [1.0; 3], "a").unwrap();
        let s = extract_slices(&v, &m).unwrap();
        assert_eq!(s.len(), 16);
        assert!(s.iter().enumerate().all(|(i, p)| p.slice_index == i && p.image.dim() == (8, 4)));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(Volume::new(Array3::from_elem((1, 1, 1), 1.5), [1.0; 3], "a").is_err());
        assert!(Volume::new(Array3::zeros((0, 1, 1)), [1.0; 3], "a").is_err());
        assert!(Volume::new(Array3::zeros((1, 1, 1)), [1.0, 0.0, 1.0], "a").is_err());
        assert!(MaskVolume::new(Array3::from_elem((1, 1, 1), 2), [1.0; 3], "a").is_err());
        let v = Volume::new(Array3::zeros((2, 2, 2)), [1.0; 3], "a").unwrap();
        let m = MaskVolume::new(Array3::zeros((2, 2, 3)), [1.0; 3], "a").unwrap();
        assert!(extract_slices(&v, &m).is_err());
    }
}
