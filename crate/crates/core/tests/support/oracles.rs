//! Brute-force references for connected components, confusion counts and
//! the Hausdorff distance, plus randomized round trips.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeseg::data::{extract_slices, load_mask, load_volume, save_mask, save_volume, MaskVolume, Volume};
use shapeseg::metrics::{confusion, dice_score, hausdorff, jaccard, EmptySet, Hausdorff};
use shapeseg::networks::{
    load_checkpoint, save_checkpoint, CaeConfig, Decoder, Discriminator, DiscriminatorConfig, Encoder, Generator,
    GeneratorConfig, TrainingMeta,
};
use shapeseg::postproc::{largest_component, stack_slices, Connectivity};

pub const VOLUMES: usize = 120;
pub const DICE_JACCARD_RTOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random binary volume of the given shape and foreground density.
pub fn random_mask(r: &mut ChaCha8Rng, dims: (usize, usize, usize), density: f64) -> MaskVolume {
    let v = Array3::from_shape_fn(dims, |_| r.gen_bool(density) as u8);
    MaskVolume::new(v, [1.0; 3], "r").unwrap()
}

fn offsets(c: Connectivity) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let l1 = dz.abs() + dy.abs() + dx.abs();
                let keep = match c {
                    Connectivity::Six => l1 == 1,
                    Connectivity::Eighteen => l1 == 1 || l1 == 2,
                    Connectivity::TwentySix => l1 >= 1,
                };
                if keep {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// Breadth-first flood fill from every unvisited voxel in raster order; the
/// largest component wins, the earlier-started one on ties.
pub fn flood_fill_largest(m: &MaskVolume, c: Connectivity) -> Array3<u8> {
    let v = m.voxels();
    let (d, h, w) = v.dim();
    let nbrs = offsets(c);
    let mut seen = Array3::from_elem((d, h, w), false);
    let mut best: Vec<(usize, usize, usize)> = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if v[[z, y, x]] == 0 || seen[[z, y, x]] {
                    continue;
                }
                let mut comp = Vec::new();
                let mut queue = VecDeque::from([(z, y, x)]);
                seen[[z, y, x]] = true;
                while let Some(p) = queue.pop_front() {
                    comp.push(p);
                    for o in &nbrs {
                        let q = [p.0 as i64 + o[0], p.1 as i64 + o[1], p.2 as i64 + o[2]];
                        if q.iter().zip([d, h, w]).any(|(&a, n)| a < 0 || a >= n as i64) {
                            continue;
                        }
                        let q = (q[0] as usize, q[1] as usize, q[2] as usize);
                        if v[[q.0, q.1, q.2]] == 1 && !seen[[q.0, q.1, q.2]] {
                            seen[[q.0, q.1, q.2]] = true;
                            queue.push_back(q);
                        }
                    }
                }
                if comp.len() > best.len() {
                    best = comp;
                }
            }
        }
    }
    let mut out = Array3::zeros((d, h, w));
    for p in best {
        out[[p.0, p.1, p.2]] = 1;
    }
    out
}

/// Largest-component filtering against flood fill on `VOLUMES` random 16^3
/// volumes for every connectivity, plus idempotence. Returns the number of
/// (volume, connectivity) cases checked.
pub fn postproc_oracle() -> usize {
    let mut r = rng(0x0CC);
    let mut cases = 0;
    for k in 0..VOLUMES {
        let density = 0.05 + 0.5 * (k as f64 / VOLUMES as f64);
        let m = random_mask(&mut r, (16, 16, 16), density);
        for c in Connectivity::ALL {
            let got = largest_component(&m, c);
            assert_eq!(got.voxels(), &flood_fill_largest(&m, c), "volume {k}, connectivity {c}");
            assert_eq!(largest_component(&got, c), got, "idempotence, volume {k}, connectivity {c}");
            cases += 1;
        }
    }
    cases
}

fn d2(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let t = (a[i] as f64 - b[i] as f64) * s[i];
        acc += t * t;
    }
    acc
}

fn points(m: &MaskVolume) -> Vec<[usize; 3]> {
    m.voxels().indexed_iter().filter(|(_, &v)| v == 1).map(|((z, y, x), _)| [z, y, x]).collect()
}

/// Symmetric Hausdorff distance by comparing every pair of points.
pub fn all_pairs_hausdorff(a: &MaskVolume, b: &MaskVolume, s: [f64; 3]) -> Option<f64> {
    let (pa, pb) = (points(a), points(b));
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| d2(p, q, s)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Some(directed(&pa, &pb).max(directed(&pb, &pa)).sqrt())
}

/// Confusion counts by enumeration, all-pairs Hausdorff and the
/// Dice-Jaccard identity on `VOLUMES` random pairs up to 16^3. Returns the
/// number of pairs.
pub fn metrics_oracle() -> usize {
    let mut r = rng(0x3E7);
    for k in 0..VOLUMES {
        let dims = (r.gen_range(1..=16), r.gen_range(1..=16), r.gen_range(1..=16));
        let s = [r.gen_range(0.5..3.0), r.gen_range(0.5..2.0), r.gen_range(0.5..2.0)];
        let pd = [0.0, 0.02, 0.2, 0.5][k % 4];
        let gd = [0.3, 0.0, 0.05, 0.5][(k / 4) % 4];
        let p = MaskVolume::new(random_mask(&mut r, dims, pd).voxels().clone(), s, "p").unwrap();
        let g = MaskVolume::new(random_mask(&mut r, dims, gd).voxels().clone(), s, "g").unwrap();

        let c = confusion(&p, &g).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (&a, &b) in p.voxels().iter().zip(g.voxels().iter()) {
            match (a, b) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                _ => fn_ += 1,
            }
        }
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_), "pair {k}");

        let oracle = all_pairs_hausdorff(&p, &g, s);
        match (hausdorff(&p, &g, &s).unwrap(), oracle) {
            (Hausdorff::Defined { mm }, Some(o)) => assert_eq!(mm, o, "pair {k}"),
            (Hausdorff::Undefined { empty }, None) => {
                let expect = match (tp + fp == 0, tp + fn_ == 0) {
                    (true, true) => EmptySet::Both,
                    (true, false) => EmptySet::Prediction,
                    _ => EmptySet::Groundtruth,
                };
                assert_eq!(empty, expect, "pair {k}");
            }
            (got, o) => panic!("pair {k}: {got:?} vs oracle {o:?}"),
        }

        let (dice, jac) = (dice_score(&c), jaccard(&c));
        let identity = 2.0 * jac / (100.0 + jac) * 100.0;
        assert!(
            (dice - identity).abs() <= DICE_JACCARD_RTOL * dice.abs().max(1e-300),
            "pair {k}: dice {dice} vs 2J/(1+J) {identity}"
        );
    }
    VOLUMES
}

pub const ROUND_TRIPS: usize = 20;

/// `.vol` save/load, network checkpoint save/load and
/// extract_slices/stack_slices on randomized inputs.
pub fn round_trips() -> usize {
    let mut r = rng(0x7717);
    let dir = tempfile::tempdir().unwrap();
    for k in 0..ROUND_TRIPS {
        let dims = (r.gen_range(1..8), r.gen_range(1..12), r.gen_range(1..12));
        let spacing = [r.gen_range(0.3..4.0), r.gen_range(0.3..2.0), r.gen_range(0.3..2.0)];
        let id = format!("subject-{k}");
        let v = Volume::new(Array3::from_shape_fn(dims, |_| r.gen_range(0.0..=1.0f32)), spacing, &id).unwrap();
        let m = MaskVolume::new(random_mask(&mut r, dims, 0.3).voxels().clone(), spacing, &id).unwrap();
        save_volume(&v, dir.path().join("v.vol")).unwrap();
        save_mask(&m, dir.path().join("m.vol")).unwrap();
        assert_eq!(load_volume(dir.path().join("v.vol")).unwrap(), v, "volume {k}");
        assert_eq!(load_mask(dir.path().join("m.vol")).unwrap(), m, "mask {k}");

        let mut slices: Vec<(usize, Array2<u8>)> =
            extract_slices(&v, &m).unwrap().into_iter().map(|p| (p.slice_index, p.mask)).collect();
        slices.shuffle(&mut r);
        assert_eq!(stack_slices(&slices, spacing, &id).unwrap(), m, "stack {k}");

        let seed = r.gen();
        let size = (16, 16);
        let meta = TrainingMeta {
            stage: format!("trip-{k}"),
            epochs: k,
            steps: k as u64 * 3,
            seed,
            loss_curve: vec![0.5, 0.25],
        };
        let x = Array4::from_shape_fn((2, 1, 16, 16), |_| r.gen_range(0.0..1.0f32));
        let path = dir.path().join("net.ckpt");

        let g = Generator::<f32>::new(
            GeneratorConfig { input_size: size, depth: 2, base_channels: 2, use_sigmoid_output: true },
            seed,
        )
        .unwrap();
        save_checkpoint(&g.to_checkpoint(meta.clone()), &path).unwrap();
        let ck = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(ck.training_meta, meta);
        assert_eq!(Generator::from_checkpoint(&ck).unwrap().forward(&x).unwrap(), g.forward(&x).unwrap());

        let cae = CaeConfig { input_size: size, depth: 2, base_channels: 2, latent_dim: 4 };
        let e = Encoder::<f32>::new(cae.clone(), seed).unwrap();
        save_checkpoint(&e.to_checkpoint(meta.clone()), &path).unwrap();
        let e2 = Encoder::from_checkpoint(&load_checkpoint::<f32>(&path).unwrap()).unwrap();
        assert_eq!(e2.params(), e.params());
        let dec = Decoder::<f32>::new(cae, seed).unwrap();
        save_checkpoint(&dec.to_checkpoint(meta.clone()), &path).unwrap();
        assert_eq!(Decoder::from_checkpoint(&load_checkpoint::<f32>(&path).unwrap()).unwrap().params(), dec.params());
        let d = Discriminator::<f32>::new(
            DiscriminatorConfig { input_size: size, depth: 2, base_channels: 2, conditioning: true },
            seed,
        )
        .unwrap();
        save_checkpoint(&d.to_checkpoint(meta), &path).unwrap();
        let d2 = Discriminator::from_checkpoint(&load_checkpoint::<f32>(&path).unwrap()).unwrap();
        assert_eq!(d2.forward(&x, &x).unwrap(), d.forward(&x, &x).unwrap());
    }
    ROUND_TRIPS
}
