//! `.vol` container: a fixed header followed by a raw little-endian payload.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SVOL"
//!      4     2  version (1)
//!      6     1  dtype: 1 = f32 intensities, 3 = u8 labels
//!      7     1  reserved (0)
//!      8    12  dims: depth, height, width as u32
//!     20    24  spacing in mm: three f64
//!     44     2  subject id length n
//!     46     n  subject id, UTF-8
//!   46+n     -  voxels in (z, y, x) C order
//! ```

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use super::{MaskVolume, Spacing, Volume};
use crate::binio::{read_file, write_file, Reader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SVOL";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;
const DTYPE_U8: u8 = 3;

pub const IMAGE_FILE: &str = "image.vol";
pub const MASK_FILE: &str = "mask.vol";

fn header(dtype: u8, dims: (usize, usize, usize), spacing: Spacing, id: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(46 + id.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    out.push(0);
    for d in [dims.0, dims.1, dims.2] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out
}

struct Header {
    dtype: u8,
    dims: (usize, usize, usize),
    spacing: Spacing,
    id: String,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    if r.take(4, "magic")? != MAGIC {
        return Err(r.error_at(0, "bad magic, not a .vol file"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(r.error_at(6, format!("unknown dtype tag {dtype}")));
    }
    r.u8("reserved")?;
    let dims = (
        r.u32("depth")? as usize,
        r.u32("height")? as usize,
        r.u32("width")? as usize,
    );
    let spacing = [r.f64("spacing z")?, r.f64("spacing y")?, r.f64("spacing x")?];
    let id_len = r.u16("subject id length")? as usize;
    let id = r.string(id_len, "subject id")?;
    Ok(Header {
        dtype,
        dims,
        spacing,
        id,
    })
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut out = header(DTYPE_F32, v.dim(), v.spacing(), v.subject_id());
    out.reserve(v.voxels().len() * 4);
    for &x in v.voxels().iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    let h = read_header(&mut r)?;
    if h.dtype != DTYPE_F32 {
        return Err(r.error_at(6, "expected an f32 intensity volume"));
    }
    let n = h.dims.0 * h.dims.1 * h.dims.2;
    let payload = r.take(n * 4, "voxel payload")?;
    r.expect_end()?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(Array3::from_shape_vec(h.dims, data).expect("length checked"), h.spacing, h.id)
}

pub fn save_mask(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut out = header(DTYPE_U8, m.dim(), m.spacing(), m.subject_id());
    out.extend(m.voxels().iter().copied());
    write_file(path.as_ref(), &out)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    let h = read_header(&mut r)?;
    if h.dtype != DTYPE_U8 {
        return Err(r.error_at(6, "expected a u8 label volume"));
    }
    let n = h.dims.0 * h.dims.1 * h.dims.2;
    let start = r.offset();
    let payload = r.take(n, "voxel payload")?;
    r.expect_end()?;
    if let Some(k) = payload.iter().position(|&v| v > 1) {
        return Err(Error::Validation(format!(
            "{}: label {} at byte {} is not binary",
            path.display(),
            payload[k],
            start + k as u64
        )));
    }
    MaskVolume::new(Array3::from_shape_vec(h.dims, payload.to_vec()).expect("length checked"), h.spacing, h.id)
}

/// Subjects of a dataset directory, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<(Volume, MaskVolume)>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|(v, _)| v.subject_id().to_string()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&(Volume, MaskVolume)> {
        self.subjects.iter().find(|(v, _)| v.subject_id() == id)
    }
}

/// Writes `<root>/<subject_id>/image.vol` and `mask.vol` per subject.
pub fn save_dataset(root: impl AsRef<Path>, subjects: &[(Volume, MaskVolume)]) -> Result<()> {
    let root = root.as_ref();
    for (v, m) in subjects {
        let dir = root.join(v.subject_id());
        save_volume(v, dir.join(IMAGE_FILE))?;
        save_mask(m, dir.join(MASK_FILE))?;
    }
    Ok(())
}

pub(crate) fn subject_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every subject directory under `root` that holds an image/mask pair.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut subjects = Vec::new();
    for (name, dir) in subject_dirs(root)? {
        let image = dir.join(IMAGE_FILE);
        let mask = dir.join(MASK_FILE);
        if !image.exists() || !mask.exists() {
            continue;
        }
        let v = load_volume(&image)?;
        let m = load_mask(&mask)?;
        if v.dim() != m.dim() {
            return Err(Error::Shape(format!("subject {name}: image {:?} vs mask {:?}", v.dim(), m.dim())));
        }
        subjects.push((v, m));
    }
    if subjects.is_empty() {
        return Err(Error::EmptyDataset(format!("no subjects under {}", root.display())));
    }
    Ok(Dataset { subjects })
}

/// 8-bit grayscale PNG of one slice, for inspection.
pub fn save_slice_png(img: &Array2<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(img[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path)?;
    Ok(())
}
