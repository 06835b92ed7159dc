//! Overlap scores and Hausdorff distance between 3-d binary masks.
//!
//! Rates are percentages. Degenerate denominators follow one convention:
//! two empty masks agree perfectly (100), an empty groundtruth with a
//! non-empty prediction scores 0.

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{MaskVolume, Spacing};
use crate::postproc::Connectivity;
use crate::{Error, Result};

pub const DEGENERATE_CONVENTION: &str =
    "both masks empty: dice, jaccard, sensitivity = 100; empty groundtruth with non-empty prediction: 0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_pair(pred: &MaskVolume, gt: &MaskVolume) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs groundtruth {:?}", pred.dim(), gt.dim())));
    }
    Ok(())
}

pub fn confusion(pred: &MaskVolume, gt: &MaskVolume) -> Result<ConfusionCounts> {
    check_pair(pred, gt)?;
    let mut c = ConfusionCounts::default();
    Zip::from(pred.voxels()).and(gt.voxels()).for_each(|&p, &g| match (p, g) {
        (1, 1) => c.tp += 1,
        (1, _) => c.fp += 1,
        (_, 1) => c.fn_ += 1,
        _ => c.tn += 1,
    });
    Ok(c)
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// `2TP / (2TP + FP + FN)`, percent.
pub fn dice_score(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 100.0)
}

/// `TP / (TP + FN)`, percent.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    let empty = if c.fp == 0 { 100.0 } else { 0.0 };
    ratio(c.tp, c.tp + c.fn_, empty)
}

/// `TN / (TN + FP)`, percent. The denominator vanishes only when the
/// groundtruth fills the volume and nothing was predicted negative wrongly.
pub fn specificity(c: &ConfusionCounts) -> f64 {
    ratio(c.tn, c.tn + c.fp, 100.0)
}

/// `TP / (TP + FP + FN)`, percent.
pub fn jaccard(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_, 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptySet {
    Prediction,
    Groundtruth,
    Both,
}

/// Hausdorff distance in millimetres, or the reason it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Hausdorff {
    Defined { mm: f64 },
    Undefined { empty: EmptySet },
}

impl Hausdorff {
    pub fn mm(&self) -> Option<f64> {
        match self {
            Hausdorff::Defined { mm } => Some(*mm),
            Hausdorff::Undefined { .. } => None,
        }
    }
}

/// Squared physical distance between two voxel centres. The brute-force
/// reference uses the same expression, which makes exact comparison
/// meaningful.
#[inline]
pub fn dist2(a: [usize; 3], b: [usize; 3], spacing: &Spacing) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (a[k] as f64 - b[k] as f64) * spacing[k];
        s += d * d;
    }
    s
}

/// Squared distance transform along one line (lower envelope of parabolas),
/// `w` the squared spacing.
fn edt_line(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + w * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + w * (p * p) as f64;
                    let s = (fq - fp) / (2.0 * w * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = w * d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest
/// foreground voxel of `m`.
pub fn distance_transform_sq(m: &Array3<u8>, spacing: &Spacing) -> Array3<f64> {
    let mut g = m.mapv(|v| if v == 1 { 0.0 } else { f64::INFINITY });
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let w = spacing[axis] * spacing[axis];
        let len = g.len_of(ndarray::Axis(axis));
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for mut lane in g.lanes_mut(ndarray::Axis(axis)) {
            for (l, x) in line.iter_mut().zip(lane.iter()) {
                *l = *x;
            }
            edt_line(&line, w, &mut out, &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(out.iter()) {
                *x = *o;
            }
        }
    }
    g
}

fn foreground(m: &Array3<u8>) -> Vec<[usize; 3]> {
    m.indexed_iter().filter(|(_, &v)| v == 1).map(|((z, y, x), _)| [z, y, x]).collect()
}

/// `max_{a in A} min_{b in B} d(a, b)²`. The distance transform locates the
/// maximising voxels; their distances are then recomputed exactly.
fn directed_sq(a: &Array3<u8>, b: &Array3<u8>, spacing: &Spacing) -> f64 {
    let dt = distance_transform_sq(b, spacing);
    let approx_max = a
        .indexed_iter()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| dt[i])
        .fold(0.0f64, f64::max);
    if approx_max == 0.0 {
        return 0.0;
    }
    let cutoff = approx_max * (1.0 - 1e-9);
    let targets = foreground(b);
    let mut best = 0.0f64;
    for ((z, y, x), _) in a.indexed_iter().filter(|(i, &v)| v == 1 && dt[*i] >= cutoff) {
        let p = [z, y, x];
        let exact = targets.iter().map(|&q| dist2(p, q, spacing)).fold(f64::INFINITY, f64::min);
        best = best.max(exact);
    }
    best
}

/// Symmetric Hausdorff distance between the foreground voxel centres of two
/// masks, with per-axis spacing in millimetres.
pub fn hausdorff(a: &MaskVolume, b: &MaskVolume, spacing: &Spacing) -> Result<Hausdorff> {
    check_pair(a, b)?;
    let empty = match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(EmptySet::Both),
        (true, false) => Some(EmptySet::Prediction),
        (false, true) => Some(EmptySet::Groundtruth),
        _ => None,
    };
    if let Some(empty) = empty {
        return Ok(Hausdorff::Undefined { empty });
    }
    let ab = directed_sq(a.voxels(), b.voxels(), spacing);
    let ba = directed_sq(b.voxels(), a.voxels(), spacing);
    Ok(Hausdorff::Defined { mm: ab.max(ba).sqrt() })
}

/// Scores of one predicted volume against its groundtruth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScores {
    pub subject_id: String,
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub jaccard: f64,
    pub hausdorff: Hausdorff,
}

/// Scores `pred` against `gt` using the groundtruth spacing.
pub fn score_subject(pred: &MaskVolume, gt: &MaskVolume) -> Result<SubjectScores> {
    let counts = confusion(pred, gt)?;
    Ok(SubjectScores {
        subject_id: gt.subject_id().to_string(),
        counts,
        dice: dice_score(&counts),
        sensitivity: sensitivity(&counts),
        specificity: specificity(&counts),
        jaccard: jaccard(&counts),
        hausdorff: hausdorff(pred, gt, &gt.spacing())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Settings that produced the scored masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub std: String,
    pub degenerate_convention: String,
    pub checkpoints: Vec<String>,
}

impl Provenance {
    pub fn new(threshold: f64, connectivity: Connectivity, checkpoints: Vec<String>) -> Self {
        Self {
            threshold,
            connectivity,
            std: "population (N) across subjects".into(),
            degenerate_convention: DEGENERATE_CONVENTION.into(),
            checkpoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subjects: Vec<SubjectScores>,
    pub dice: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
    pub jaccard: MeanStd,
    /// `None` when no subject has a defined distance.
    pub hausdorff_mm: Option<MeanStd>,
    pub hausdorff_undefined: usize,
    pub provenance: Provenance,
}

pub fn aggregate(subjects: Vec<SubjectScores>, provenance: Provenance) -> Result<MetricsReport> {
    if subjects.is_empty() {
        return Err(Error::EmptyDataset("no subjects to aggregate".into()));
    }
    let col = |f: fn(&SubjectScores) -> f64| {
        MeanStd::of(&subjects.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    let hd: Vec<f64> = subjects.iter().filter_map(|s| s.hausdorff.mm()).collect();
    Ok(MetricsReport {
        dice: col(|s| s.dice),
        sensitivity: col(|s| s.sensitivity),
        specificity: col(|s| s.specificity),
        jaccard: col(|s| s.jaccard),
        hausdorff_mm: MeanStd::of(&hd),
        hausdorff_undefined: subjects.len() - hd.len(),
        subjects,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn vol(d: (usize, usize, usize), v: Vec<u8>) -> MaskVolume {
        MaskVolume::new(Array3::from_shape_vec(d, v).unwrap(), [1.0; 3], "s").unwrap()
    }

    #[test]
    fn hand_enumerated_case() {
        let c = confusion(&vol((1, 2, 2), vec![1, 1, 0, 0]), &vol((1, 2, 2), vec![1, 0, 1, 0])).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(dice_score(&c), 50.0);
        assert!((jaccard(&c) - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(sensitivity(&c), 50.0);
        assert_eq!(specificity(&c), 50.0);
    }

    #[test]
    fn complements_and_identity() {
        let a = vol((2, 2, 2), vec![1, 0, 1, 1, 0, 0, 1, 0]);
        let not_a = a.with_voxels(a.voxels().mapv(|v| 1 - v)).unwrap();
        let c = confusion(&a, &a).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!([dice_score(&c), sensitivity(&c), specificity(&c), jaccard(&c)], [100.0; 4]);
        let c = confusion(&not_a, &a).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn degenerate_conventions() {
        let empty = vol((1, 1, 2), vec![0, 0]);
        let one = vol((1, 1, 2), vec![0, 1]);
        let c = confusion(&empty, &empty).unwrap();
        assert_eq!([dice_score(&c), sensitivity(&c), jaccard(&c)], [100.0; 3]);
        let c = confusion(&one, &empty).unwrap();
        assert_eq!([dice_score(&c), sensitivity(&c), jaccard(&c)], [0.0; 3]);
        assert_eq!(
            hausdorff(&empty, &one, &[1.0; 3]).unwrap(),
            Hausdorff::Undefined { empty: EmptySet::Prediction }
        );
    }

    #[test]
    fn two_point_hausdorff() {
        let mut a = Array3::zeros((1, 1, 4));
        let mut b = a.clone();
        a[[0, 0, 0]] = 1;
        b[[0, 0, 3]] = 1;
        let (a, b) = (vol((1, 1, 4), a.into_raw_vec_and_offset().0), vol((1, 1, 4), b.into_raw_vec_and_offset().0));
        assert_eq!(hausdorff(&a, &b, &[1.0; 3]).unwrap().mm(), Some(3.0));
        assert_eq!(hausdorff(&a, &a, &[1.0; 3]).unwrap().mm(), Some(0.0));
        assert_eq!(hausdorff(&a, &b, &[1.0, 1.0, 0.5]).unwrap().mm(), Some(1.5));
    }

    #[test]
    fn edt_matches_brute_force_on_anisotropic_grid() {
        let mut m = Array3::zeros((3, 4, 5));
        m[[0, 1, 2]] = 1;
        m[[2, 3, 0]] = 1;
        let sp = [2.0, 0.7, 1.3];
        let dt = distance_transform_sq(&m, &sp);
        let pts = foreground(&m);
        for ((z, y, x), &v) in dt.indexed_iter() {
            let bf = pts.iter().map(|&q| dist2([z, y, x], q, &sp)).fold(f64::INFINITY, f64::min);
            assert!((v - bf).abs() <= 1e-12 * bf.max(1.0), "{v} vs {bf}");
        }
    }

    #[test]
    fn aggregate_population_std() {
        let s = |d: f64, hd: Option<f64>| SubjectScores {
            subject_id: "x".into(),
            counts: ConfusionCounts::default(),
            dice: d,
            sensitivity: d,
            specificity: d,
            jaccard: d,
            hausdorff: match hd {
                Some(mm) => Hausdorff::Defined { mm },
                None => Hausdorff::Undefined { empty: EmptySet::Prediction },
            },
        };
        let prov = Provenance::new(0.5, Connectivity::TwentySix, vec![]);
        let r = aggregate(vec![s(80.0, Some(4.0)), s(84.0, None)], prov.clone()).unwrap();
        assert_eq!((r.dice.mean, r.dice.std), (82.0, 2.0));
        assert_eq!(r.hausdorff_undefined, 1);
        assert_eq!(r.hausdorff_mm.unwrap().std, 0.0);
        assert!(aggregate(vec![], prov).is_err());
    }
}
