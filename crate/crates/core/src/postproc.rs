//! Slice-wise probabilities to a final 3-d mask: threshold, stack, keep the
//! largest connected component.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{MaskVolume, Spacing};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Voxel neighbourhood used for connected components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Faces and edges.
    Eighteen,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix];

    pub fn neighborhood(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Whether the offset `(dz, dy, dx)` with components in `{-1, 0, 1}` is
    /// a neighbour.
    pub fn admits(self, d: [isize; 3]) -> bool {
        let nonzero = d.iter().filter(|&&c| c != 0).count();
        match self {
            Connectivity::Six => nonzero == 1,
            Connectivity::Eighteen => (1..=2).contains(&nonzero),
            Connectivity::TwentySix => nonzero >= 1,
        }
    }

    /// Neighbour offsets preceding the centre in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let d = [dz, dy, dx];
                    if d < [0, 0, 0] && self.admits(d) {
                        out.push(d);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::config("connectivity", format!("must be 6, 18 or 26, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighborhood()
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::config("connectivity", format!("must be 6, 18 or 26, got `{s}`")))?;
        Connectivity::try_from(n)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighborhood())
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::config("threshold", format!("must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// `1` where `p >= t`, else `0`.
pub fn threshold(p: &Array2<f32>, t: f64) -> Result<Array2<u8>> {
    check_threshold(t)?;
    Ok(p.mapv(|v| (v as f64 >= t) as u8))
}

/// Stacks `(slice_index, mask)` pairs into a volume with slice `k` at depth
/// `k`. Input order does not matter; the indices must be exactly `0..n`.
pub fn stack_slices(slices: &[(usize, Array2<u8>)], spacing: Spacing, subject_id: &str) -> Result<MaskVolume> {
    if slices.is_empty() {
        return Err(Error::Shape("no slices to stack".into()));
    }
    let (h, w) = slices[0].1.dim();
    let n = slices.len();
    let mut placed = vec![false; n];
    let mut out = Array3::zeros((n, h, w));
    for (k, s) in slices {
        if s.dim() != (h, w) {
            return Err(Error::Shape(format!("slice {k} is {:?}, expected {:?}", s.dim(), (h, w))));
        }
        if *k >= n || placed[*k] {
            return Err(Error::Shape(format!("slice index {k} is duplicated or out of range 0..{n}")));
        }
        placed[*k] = true;
        out.index_axis_mut(ndarray::Axis(0), *k).assign(s);
    }
    MaskVolume::new(out, spacing, subject_id)
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Smaller index wins, so a root is the component's first voxel.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Keeps the largest connected foreground component. Equal sizes go to the
/// component whose first voxel in `(z, y, x)` order comes first.
pub fn largest_component(v: &MaskVolume, c: Connectivity) -> MaskVolume {
    let m = v.voxels();
    let (d, h, w) = m.dim();
    let flat = m.as_slice().expect("standard layout");
    let mut parent: Vec<u32> = (0..flat.len() as u32).collect();
    let offsets = c.backward_offsets();
    let idx = |z: usize, y: usize, x: usize| ((z * h + y) * w + x) as u32;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if flat[idx(z, y, x) as usize] == 0 {
                    continue;
                }
                for o in &offsets {
                    let (nz, ny, nx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                    if nz < 0 || ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = idx(nz as usize, ny as usize, nx as usize);
                    if flat[j as usize] == 1 {
                        union(&mut parent, idx(z, y, x), j);
                    }
                }
            }
        }
    }
    let mut size = vec![0u32; flat.len()];
    for i in 0..flat.len() {
        if flat[i] == 1 {
            let r = find(&mut parent, i as u32);
            size[r as usize] += 1;
        }
    }
    // Roots are component minima, so a raster scan with strict `>` applies
    // the tie rule.
    let mut best: Option<(u32, u32)> = None;
    for (i, &s) in size.iter().enumerate() {
        if s > 0 && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i as u32, s));
        }
    }
    let out = match best {
        None => m.clone(),
        Some((root, _)) => {
            let data: Vec<u8> = (0..flat.len())
                .map(|i| (flat[i] == 1 && find(&mut parent, i as u32) == root) as u8)
                .collect();
            Array3::from_shape_vec((d, h, w), data).expect("same shape")
        }
    };
    v.with_voxels(out).expect("subset of a valid mask")
}

/// Threshold and stacking settings for turning slice predictions into a
/// volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocConfig {
    pub threshold: f64,
    pub connectivity: Connectivity,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)
    }

    /// Full pipeline on ordered per-slice probability maps.
    pub fn apply(&self, probabilities: &[Array2<f32>], spacing: Spacing, subject_id: &str) -> Result<MaskVolume> {
        let slices = probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| Ok((k, threshold(p, self.threshold)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(largest_component(&stack_slices(&slices, spacing, subject_id)?, self.connectivity))
    }
}
