//! Procedural stand-in for annotated MR volumes.
//!
//! Each subject holds one target: a tilted, flattened ellipsoid with one to
//! three thin curved tubes attached (the "blade" and its processes). The
//! background carries a smooth texture, Gaussian noise and a few ellipsoidal
//! distractors whose intensity matches the target, so intensity alone does
//! not identify the structure. Part of the target fades towards background
//! intensity, mimicking weak bone/muscle contrast.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{MaskVolume, Spacing, Volume};
use crate::postproc::{largest_component, Connectivity};
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

const MAX_ATTEMPTS: u64 = 64;

/// Shape of the target structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    /// Ellipsoid semi-axes as fractions of the (depth, height, width) extent.
    pub radius_frac: [(f64, f64); 3],
    /// Maximum in-plane rotation (degrees, symmetric) and tilt (degrees).
    pub rotation_deg: f64,
    pub tilt_deg: f64,
    /// Inclusive range of the number of tubes. Tube `k` leaves the body in
    /// template direction `k`, jittered by up to `direction_jitter_deg`.
    pub protrusions: (usize, usize),
    pub direction_jitter_deg: f64,
    /// Tube end point distance from the centre, in multiples of the
    /// ellipsoid radius along the same direction.
    pub protrusion_length: (f64, f64),
    /// Tube radius in voxels.
    pub protrusion_thickness: (f64, f64),
    /// Fraction of the contrast lost at the faded end of the structure.
    pub fade: (f64, f64),
}

/// Non-target structures of target-like intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorParams {
    pub count: (usize, usize),
    /// Semi-axes as fractions of each axis extent.
    pub radius_frac: (f64, f64),
    /// Distractor contrast relative to the target contrast.
    pub relative_contrast: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    /// (depth, height, width); depth is the slice axis.
    pub volume_shape: (usize, usize, usize),
    pub spacing: Spacing,
    pub noise_std: f64,
    /// Target minus background intensity.
    pub contrast: (f64, f64),
    pub texture_amplitude: f64,
    pub blob_params: BlobParams,
    pub distractor_params: DistractorParams,
    /// Accepted band of target voxel fraction.
    pub target_fraction: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::scapula_like_v1()
    }
}

impl SyntheticConfig {
    /// The pinned reference benchmark.
    pub fn scapula_like_v1() -> Self {
        Self {
            n_subjects: 12,
            volume_shape: (32, 64, 64),
            spacing: [2.0, 1.0, 1.0],
            noise_std: 0.06,
            contrast: (0.15, 0.35),
            texture_amplitude: 0.05,
            blob_params: BlobParams {
                radius_frac: [(0.22, 0.32), (0.18, 0.26), (0.08, 0.12)],
                rotation_deg: 20.0,
                tilt_deg: 15.0,
                protrusions: (1, 3),
                direction_jitter_deg: 20.0,
                protrusion_length: (1.5, 2.0),
                protrusion_thickness: (1.3, 2.2),
                fade: (0.3, 0.8),
            },
            distractor_params: DistractorParams {
                count: (2, 4),
                radius_frac: (0.06, 0.12),
                relative_contrast: (0.8, 1.1),
            },
            target_fraction: (0.005, 0.2),
            seed: 2020,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_subjects < 2 {
            return Err(Error::config("n_subjects", "must be at least 2 for leave-one-out"));
        }
        let (d, h, w) = self.volume_shape;
        if d < 8 || h < 8 || w < 8 {
            return Err(Error::config("volume_shape", "every axis must be at least 8"));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("spacing", "must be strictly positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be >= 0"));
        }
        if !ordered(self.contrast) || self.contrast.0 < 0.0 {
            return Err(Error::config("contrast", "must be a non-negative interval"));
        }
        if !(self.texture_amplitude >= 0.0) {
            return Err(Error::config("texture_amplitude", "must be >= 0"));
        }
        let b = &self.blob_params;
        if !b.radius_frac.iter().all(|&r| ordered(r) && r.0 > 0.0) {
            return Err(Error::config("blob_params.radius_frac", "must be positive intervals"));
        }
        if b.protrusions.0 < 1 || b.protrusions.0 > b.protrusions.1 || b.protrusions.1 > 3 {
            return Err(Error::config("blob_params.protrusions", "must satisfy 1 <= lo <= hi <= 3"));
        }
        if !(b.direction_jitter_deg >= 0.0 && b.direction_jitter_deg <= 180.0) {
            return Err(Error::config("blob_params.direction_jitter_deg", "must lie in [0, 180]"));
        }
        if !ordered(b.protrusion_length) || b.protrusion_length.0 <= 1.0 {
            return Err(Error::config("blob_params.protrusion_length", "must exceed 1 (tubes leave the body)"));
        }
        if !ordered(b.protrusion_thickness) || b.protrusion_thickness.0 < 1.0 {
            return Err(Error::config("blob_params.protrusion_thickness", "must be at least 1 voxel"));
        }
        if !ordered(b.fade) || b.fade.0 < 0.0 || b.fade.1 > 1.0 {
            return Err(Error::config("blob_params.fade", "must lie in [0, 1]"));
        }
        let dp = &self.distractor_params;
        if dp.count.0 > dp.count.1 {
            return Err(Error::config("distractor_params.count", "lo must not exceed hi"));
        }
        if !ordered(dp.radius_frac) || dp.radius_frac.0 <= 0.0 {
            return Err(Error::config("distractor_params.radius_frac", "must be a positive interval"));
        }
        if !ordered(dp.relative_contrast) {
            return Err(Error::config("distractor_params.relative_contrast", "must be an interval"));
        }
        if !ordered(self.target_fraction) || self.target_fraction.0 < 0.0 || self.target_fraction.1 > 1.0 {
            return Err(Error::config("target_fraction", "must be a sub-interval of [0, 1]"));
        }
        Ok(())
    }
}

type Vec3 = [f64; 3];

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotation about the slice axis by `theta`, then a tilt by `phi` in the
/// (z, y) plane. Rows are the local axes expressed in volume coordinates.
fn rotation(theta: f64, phi: f64) -> [Vec3; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [[cp, sp * ct, sp * st], [-sp, cp * ct, cp * st], [0.0, -st, ct]]
}

fn to_local(r: &[Vec3; 3], v: Vec3) -> Vec3 {
    [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
}

fn to_global(r: &[Vec3; 3], l: Vec3) -> Vec3 {
    let mut g = [0.0; 3];
    for (axis, &c) in r.iter().zip(l.iter()) {
        for k in 0..3 {
            g[k] += axis[k] * c;
        }
    }
    g
}

struct Ellipsoid {
    centre: Vec3,
    radii: Vec3,
    rot: [Vec3; 3],
}

impl Ellipsoid {
    fn contains(&self, p: Vec3) -> bool {
        let l = to_local(&self.rot, sub(p, self.centre));
        (0..3).map(|k| (l[k] / self.radii[k]).powi(2)).sum::<f64>() <= 1.0
    }
}

struct Tube {
    points: Vec<Vec3>,
    radius: f64,
}

impl Tube {
    fn contains(&self, p: Vec3) -> bool {
        let r2 = self.radius * self.radius;
        self.points.iter().any(|q| {
            let d = sub(p, *q);
            dot(d, d) <= r2
        })
    }
}

/// In-plane angles (degrees, body frame) of the protrusion template.
const TEMPLATE_DIRECTIONS: [f64; 3] = [0.0, 115.0, 235.0];

fn unit_in_plane(rng: &mut ChaCha8Rng, a: f64) -> Vec3 {
    let z = rng.gen_range(-0.35..0.35);
    let n = (1.0f64 + z * z).sqrt();
    [z / n, a.sin() / n, a.cos() / n]
}

fn for_each_voxel(shape: (usize, usize, usize), mut f: impl FnMut((usize, usize, usize), Vec3)) {
    for z in 0..shape.0 {
        for y in 0..shape.1 {
            for x in 0..shape.2 {
                f((z, y, x), [z as f64, y as f64, x as f64]);
            }
        }
    }
}

/// Rasterized target mask plus the data needed to paint intensities.
struct Target {
    mask: Array3<u8>,
    fade_dir: Vec3,
    centre: Vec3,
    extent: f64,
}

fn build_target(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Target {
    let (d, h, w) = cfg.volume_shape;
    let b = &cfg.blob_params;
    let dims = [d as f64, h as f64, w as f64];
    let centre = [
        dims[0] / 2.0 + rng.gen_range(-0.08..0.08) * dims[0],
        dims[1] / 2.0 + rng.gen_range(-0.1..0.1) * dims[1],
        dims[2] / 2.0 + rng.gen_range(-0.1..0.1) * dims[2],
    ];
    let radii = [
        sample(rng, b.radius_frac[0]) * dims[0],
        sample(rng, b.radius_frac[1]) * dims[1],
        sample(rng, b.radius_frac[2]) * dims[2],
    ];
    let theta = rng.gen_range(-b.rotation_deg..=b.rotation_deg).to_radians();
    let phi = rng.gen_range(-b.tilt_deg..=b.tilt_deg).to_radians();
    let body = Ellipsoid {
        centre,
        radii,
        rot: rotation(theta, phi),
    };
    let n_tubes = rng.gen_range(b.protrusions.0..=b.protrusions.1);
    let mut tubes = Vec::with_capacity(n_tubes);
    for _ in 0..n_tubes {
        let jitter = if b.direction_jitter_deg > 0.0 {
            rng.gen_range(-b.direction_jitter_deg..=b.direction_jitter_deg)
        } else {
            0.0
        };
        let u = unit_in_plane(rng, (TEMPLATE_DIRECTIONS[tubes.len()] + jitter).to_radians());
        let scaled = [u[0] * radii[0], u[1] * radii[1], u[2] * radii[2]];
        let len = sample(rng, b.protrusion_length);
        let start_l = scaled.map(|c| c * 0.5);
        let end_l = scaled.map(|c| c * len);
        let start = {
            let g = to_global(&body.rot, start_l);
            [g[0] + centre[0], g[1] + centre[1], g[2] + centre[2]]
        };
        let end = {
            let g = to_global(&body.rot, end_l);
            [g[0] + centre[0], g[1] + centre[1], g[2] + centre[2]]
        };
        let span = sub(end, start);
        let bend_angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let bend = unit_in_plane(rng, bend_angle);
        let bend_amount = rng.gen_range(-0.35..0.35) * dot(span, span).sqrt();
        let control = [
            (start[0] + end[0]) / 2.0 + bend[0] * bend_amount * 0.3,
            (start[1] + end[1]) / 2.0 + bend[1] * bend_amount,
            (start[2] + end[2]) / 2.0 + bend[2] * bend_amount,
        ];
        let points = (0..=96)
            .map(|i| {
                let t = i as f64 / 96.0;
                let (a, bb, c) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
                [
                    a * start[0] + bb * control[0] + c * end[0],
                    a * start[1] + bb * control[1] + c * end[1],
                    a * start[2] + bb * control[2] + c * end[2],
                ]
            })
            .collect();
        tubes.push(Tube {
            points,
            radius: sample(rng, b.protrusion_thickness),
        });
    }
    let mut mask = Array3::zeros((d, h, w));
    for_each_voxel((d, h, w), |idx, p| {
        if body.contains(p) || tubes.iter().any(|t| t.contains(p)) {
            mask[idx] = 1u8;
        }
    });
    let fade_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let fade_dir = unit_in_plane(rng, fade_angle);
    Target {
        mask,
        fade_dir,
        centre,
        extent: radii.iter().cloned().fold(0.0, f64::max),
    }
}

fn dilate(mask: &Array3<u8>, iterations: usize) -> Array3<u8> {
    let (d, h, w) = mask.dim();
    let mut cur = mask.clone();
    for _ in 0..iterations {
        let prev = cur.clone();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if prev[[z, y, x]] == 1 {
                        continue;
                    }
                    let hit = (z.saturating_sub(1)..(z + 2).min(d)).any(|zz| {
                        (y.saturating_sub(1)..(y + 2).min(h))
                            .any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| prev[[zz, yy, xx]] == 1))
                    });
                    if hit {
                        cur[[z, y, x]] = 1;
                    }
                }
            }
        }
    }
    cur
}

/// Low-frequency texture: a sum of random plane waves.
fn texture(shape: (usize, usize, usize), amplitude: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let waves: Vec<(Vec3, f64)> = (0..4)
        .map(|_| {
            let dir = [rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = dot(dir, dir).sqrt().max(1e-6);
            let wavelength = rng.gen_range(8.0..24.0);
            let k = std::f64::consts::TAU / wavelength / n;
            ([dir[0] * k, dir[1] * k, dir[2] * k], rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let mut out = Array3::zeros(shape);
    for_each_voxel(shape, |idx, p| {
        out[idx] = amplitude / 4.0 * waves.iter().map(|(k, ph)| (dot(*k, p) + ph).cos()).sum::<f64>();
    });
    out
}

fn attempt(cfg: &SyntheticConfig, index: usize, rng: &mut ChaCha8Rng) -> Option<(Volume, MaskVolume)> {
    let shape = cfg.volume_shape;
    let (d, h, w) = shape;
    let subject_id = format!("subj{:02}", index + 1);
    let target = build_target(cfg, rng);
    let mask = MaskVolume::new(target.mask, cfg.spacing, subject_id.clone()).ok()?;
    let mask = largest_component(&mask, Connectivity::Six);
    let fraction = mask.count() as f64 / (d * h * w) as f64;
    if fraction < cfg.target_fraction.0 || fraction > cfg.target_fraction.1 || mask.is_empty() {
        return None;
    }

    let background = rng.gen_range(0.2..0.3);
    let contrast = sample(rng, cfg.contrast);
    let fade = sample(rng, cfg.blob_params.fade);
    let mut intensity = texture(shape, cfg.texture_amplitude, rng);
    intensity.mapv_inplace(|v| v + background);

    let keep_out = dilate(mask.voxels(), 3);
    let dp = &cfg.distractor_params;
    let n_distractors = rng.gen_range(dp.count.0..=dp.count.1);
    let dims = [d as f64, h as f64, w as f64];
    let mut distractors = Array3::<f64>::zeros(shape);
    for _ in 0..n_distractors {
        for _ in 0..20 {
            let radii = [0, 1, 2].map(|k| sample(rng, dp.radius_frac) * dims[k]);
            let centre = [0, 1, 2].map(|k| rng.gen_range(0.0..dims[k]));
            let e = Ellipsoid {
                centre,
                radii,
                rot: rotation(rng.gen_range(0.0..std::f64::consts::PI), 0.0),
            };
            let mut voxels = Vec::new();
            let mut clash = false;
            for_each_voxel(shape, |idx, p| {
                if e.contains(p) {
                    clash |= keep_out[idx] == 1;
                    voxels.push(idx);
                }
            });
            if !clash && !voxels.is_empty() {
                let level = contrast * sample(rng, dp.relative_contrast);
                for idx in voxels {
                    distractors[idx] = level;
                }
                break;
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("valid std");
    let mut voxels = Array3::<f32>::zeros(shape);
    let m = mask.voxels();
    for_each_voxel(shape, |idx, p| {
        let mut v = intensity[idx] + distractors[idx];
        if m[idx] == 1 {
            // Contrast decays linearly along `fade_dir` across the structure.
            let s = dot(sub(p, target.centre), target.fade_dir) / target.extent;
            let t = ((s + 1.0) / 2.0).clamp(0.0, 1.0);
            v += contrast * (1.0 - fade * t);
        }
        if cfg.noise_std > 0.0 {
            v += noise.sample(rng);
        }
        voxels[idx] = v.clamp(0.0, 1.0) as f32;
    });
    let volume = Volume::new(voxels, cfg.spacing, subject_id).ok()?;
    Some((volume, mask))
}

/// Generates subject `index` of the dataset described by `cfg`. The result
/// depends only on `(cfg, index)`.
pub fn generate_subject(cfg: &SyntheticConfig, index: usize) -> Result<(Volume, MaskVolume)> {
    cfg.validate()?;
    for a in 0..MAX_ATTEMPTS {
        let mut rng = keyed(cfg.seed, Purpose::Subject, ((index as u64) << 16) | a);
        if let Some(pair) = attempt(cfg, index, &mut rng) {
            return Ok(pair);
        }
    }
    Err(Error::config(
        "target_fraction",
        format!("no subject within the band after {MAX_ATTEMPTS} attempts"),
    ))
}

pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Vec<(Volume, MaskVolume)>> {
    cfg.validate()?;
    (0..cfg.n_subjects).map(|i| generate_subject(cfg, i)).collect()
}
