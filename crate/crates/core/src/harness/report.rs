use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};

use crate::data::{MaskVolume, Volume};
use crate::{Error, Result};

pub const GT_COLOR: [u8; 3] = [255, 0, 0];
pub const PRED_COLOR: [u8; 3] = [0, 255, 0];
/// Pixels on both contours.
pub const BOTH_COLOR: [u8; 3] = [255, 255, 0];

/// Foreground pixels with a 4-neighbour outside the mask or the image.
pub fn contour(mask: ArrayView2<u8>) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        if mask[[y, x]] == 0 {
            return false;
        }
        y == 0
            || x == 0
            || y + 1 == h
            || x + 1 == w
            || mask[[y - 1, x]] == 0
            || mask[[y + 1, x]] == 0
            || mask[[y, x - 1]] == 0
            || mask[[y, x + 1]] == 0
    })
}

/// The `k` slices with the largest groundtruth area, in slice order.
/// Ties go to the lower index; empty slices are never chosen.
pub fn select_slices(gt: &MaskVolume, k: usize) -> Vec<usize> {
    let mut area: Vec<(usize, usize)> = gt
        .voxels()
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(z, s)| (z, s.iter().filter(|&&v| v == 1).count()))
        .filter(|&(_, a)| a > 0)
        .collect();
    area.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = area.into_iter().take(k).map(|(z, _)| z).collect();
    chosen.sort_unstable();
    chosen
}

/// RGB overlay of slice `z`: the image in gray, groundtruth contour in red,
/// predicted contour in green.
pub fn overlay(image: &Volume, gt: &MaskVolume, pred: &MaskVolume, z: usize) -> Result<image::RgbImage> {
    if image.dim() != gt.dim() || gt.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "overlay inputs differ: image {:?}, groundtruth {:?}, prediction {:?}",
            image.dim(),
            gt.dim(),
            pred.dim()
        )));
    }
    if z >= image.dim().0 {
        return Err(Error::Shape(format!("slice {z} outside depth {}", image.dim().0)));
    }
    let img = image.voxels().index_axis(Axis(0), z);
    let g = contour(gt.voxels().index_axis(Axis(0), z));
    let p = contour(pred.voxels().index_axis(Axis(0), z));
    let (h, w) = img.dim();
    Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        let rgb = match (g[[y, x]], p[[y, x]]) {
            (true, true) => BOTH_COLOR,
            (true, false) => GT_COLOR,
            (false, true) => PRED_COLOR,
            (false, false) => [(img[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8; 3],
        };
        image::Rgb(rgb)
    }))
}

/// Writes `<dir>/<subject>_z<slice>.png` for each selected slice and returns the paths.
pub fn write_overlays(
    image: &Volume,
    gt: &MaskVolume,
    pred: &MaskVolume,
    slices: &[usize],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    slices
        .iter()
        .map(|&z| {
            let path = dir.join(format!("{}_z{z:03}.png", gt.subject_id()));
            overlay(image, gt, pred, z)?.save(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn square(d: usize, lo: usize, hi: usize) -> MaskVolume {
        let v = Array3::from_shape_fn((d, 8, 8), |(_, y, x)| ((lo..hi).contains(&y) && (lo..hi).contains(&x)) as u8);
        MaskVolume::new(v, [1.0; 3], "s").unwrap()
    }

    #[test]
    fn contour_of_square_is_its_ring() {
        let m = square(1, 2, 6);
        let c = contour(m.voxels().index_axis(Axis(0), 0));
        assert_eq!(c.iter().filter(|&&b| b).count(), 12);
        assert!(!c[[3, 3]] && c[[2, 3]] && !c[[1, 1]]);
    }

    #[test]
    fn colors_mark_each_contour() {
        let gt = square(2, 2, 6);
        let pred = square(2, 1, 6);
        let img = Volume::new(Array3::from_elem((2, 8, 8), 0.5), [1.0; 3], "s").unwrap();
        let o = overlay(&img, &gt, &pred, 1).unwrap();
        assert_eq!(o.get_pixel(1, 1).0, PRED_COLOR);
        assert_eq!(o.get_pixel(2, 2).0, GT_COLOR);
        assert_eq!(o.get_pixel(5, 5).0, BOTH_COLOR);
        assert_eq!(o.get_pixel(0, 0).0, [128; 3]);
    }

    #[test]
    fn slice_selection_prefers_area_then_index() {
        let mut v = Array3::zeros((5, 4, 4));
        v[[1, 0, 0]] = 1;
        v[[3, 0, 0]] = 1;
        v[[3, 0, 1]] = 1;
        v[[4, 1, 1]] = 1;
        let m = MaskVolume::new(v, [1.0; 3], "s").unwrap();
        assert_eq!(select_slices(&m, 1), vec![3]);
        assert_eq!(select_slices(&m, 2), vec![1, 3]);
        assert_eq!(select_slices(&m, 9), vec![1, 3, 4]);
    }
}
