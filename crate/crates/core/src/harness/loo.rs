use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::data::{extract_slices, leave_one_out_splits, save_mask, Dataset, SlicePair, Split, MASK_FILE};
use crate::metrics::{aggregate, score_subject, MetricsReport, Provenance, SubjectScores};
use crate::networks::save_checkpoint;
use crate::trainer::{predict_volume, train_cae, train_segmenter, training_meta, Ablation, CaeModel, Stage};
use crate::{Error, ErrorKind, Result};

/// Content hash of the library sources this binary was built from.
pub const CODE_HASH: &str = env!("SHAPESEG_CODE_HASH");

/// A (split, method) cell that stopped on a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedCell {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Ablation,
    /// `None` when every cell of the method aborted.
    pub report: Option<MetricsReport>,
    pub aborted: Vec<AbortedCell>,
}

/// Auto-encoder reconstruction quality of one split, hard Dice in `[0, 1]`
/// averaged over the non-empty masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeSplit {
    pub test_subject: String,
    pub train_dice: Option<f64>,
    pub heldout_dice: Option<f64>,
    pub train_masks: usize,
    pub heldout_masks: usize,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub config: ExperimentConfig,
    /// SHA-256 of the config with its paths blanked.
    pub config_hash: String,
    pub dataset_hash: String,
    pub code_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<MethodRow>,
    pub splits: Vec<Split>,
    pub cae: Vec<CaeSplit>,
    pub provenance: RunProvenance,
    /// Wall-clock seconds per stage, keyed `<subject>/<method>`.
    pub timing_s: BTreeMap<String, f64>,
}

impl AblationTable {
    pub fn row(&self, method: Ablation) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Mean test Dice of `method`, if it has any scored subject.
    pub fn mean_dice(&self, method: Ablation) -> Option<f64> {
        self.row(method)?.report.as_ref().map(|r| r.dice.mean)
    }

    pub fn mean_hausdorff(&self, method: Ablation) -> Option<f64> {
        self.row(method)?.report.as_ref()?.hausdorff_mm.map(|h| h.mean)
    }

    pub fn has_aborts(&self) -> bool {
        self.rows.iter().any(|r| !r.aborted.is_empty()) || self.cae.iter().any(|c| c.aborted.is_some())
    }

    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.timing_s.clear();
        t
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        crate::binio::write_file(path.as_ref(), text.as_bytes())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = crate::binio::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    digest.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.dataset = Default::default();
    c.out = Default::default();
    let json = serde_json::to_vec(&c).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(hex(Sha256::digest(json)))
}

pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for (v, m) in &ds.subjects {
        h.update(v.subject_id().as_bytes());
        for s in v.spacing() {
            h.update(s.to_le_bytes());
        }
        let (d, y, x) = v.dim();
        for n in [d, y, x] {
            h.update((n as u64).to_le_bytes());
        }
        for &p in v.voxels().iter() {
            h.update(p.to_le_bytes());
        }
        h.update(m.voxels().as_slice().expect("standard layout"));
    }
    hex(h.finalize())
}

/// The subset of `ds` the experiment names, in the order it names them.
pub fn select_subjects(ds: &Dataset, subjects: Option<&[String]>) -> Result<Dataset> {
    let Some(ids) = subjects else {
        return Ok(ds.clone());
    };
    let missing: Vec<&str> = ids.iter().filter(|id| ds.get(id).is_none()).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::SubjectMismatch(format!("not in dataset: {}", missing.join(", "))));
    }
    Ok(Dataset {
        subjects: ids.iter().map(|id| ds.get(id).expect("checked").clone()).collect(),
    })
}

fn non_empty(masks: impl IntoIterator<Item = Array2<u8>>) -> Vec<Array2<u8>> {
    masks.into_iter().filter(|m| m.iter().any(|&v| v == 1)).collect()
}

fn abort_or<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if e.kind() == ErrorKind::TrainingAbort => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn rel(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

/// Leave-one-out over `ds`: per split the auto-encoder is trained once when
/// any method needs it, then every method trains from the same generator
/// initialization, predicts the held-out subject and is scored on the
/// post-processed volume. With `out`, predictions, checkpoints and logs are
/// written below it.
pub fn run_loo(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationTable> {
    cfg.validate()?;
    let ds = select_subjects(ds, cfg.subjects.as_deref())?;
    let splits = leave_one_out_splits(&ds.ids())?;
    let needs_cae = cfg.methods.iter().any(|m| m.uses_encoder());
    let base = cfg.base_config();

    let mut cells: BTreeMap<Ablation, Vec<SubjectScores>> = BTreeMap::new();
    let mut aborted: BTreeMap<Ablation, Vec<AbortedCell>> = BTreeMap::new();
    let mut checkpoints: BTreeMap<Ablation, Vec<String>> = BTreeMap::new();
    let mut cae_rows = Vec::new();
    let mut timing = BTreeMap::new();

    for (k, split) in splits.iter().enumerate() {
        let (test_v, test_m) = ds.get(&split.test).expect("split ids come from the dataset");
        let pairs: Vec<SlicePair> = split
            .train
            .iter()
            .map(|id| {
                let (v, m) = ds.get(id).expect("split ids come from the dataset");
                extract_slices(v, m)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        progress(&format!("split {}/{} test={}", k + 1, splits.len(), split.test));

        let mut cae: Option<std::result::Result<CaeModel, String>> = None;
        if needs_cae {
            let clock = Instant::now();
            let train_masks = non_empty(pairs.iter().map(|p| p.mask.clone()));
            let heldout = non_empty(extract_slices(test_v, test_m)?.into_iter().map(|p| p.mask));
            let result = abort_or(train_cae(&train_masks, &base))?;
            let mut row = CaeSplit {
                test_subject: split.test.clone(),
                train_dice: None,
                heldout_dice: None,
                train_masks: train_masks.len(),
                heldout_masks: heldout.len(),
                aborted: None,
            };
            match &result {
                Ok(model) => {
                    row.train_dice = Some(model.reconstruction_dice(&train_masks)?);
                    if !heldout.is_empty() {
                        row.heldout_dice = Some(model.reconstruction_dice(&heldout)?);
                    }
                    if let Some(out) = out {
                        let dir = out.join("checkpoints").join("cae").join(&split.test);
                        let meta = training_meta(Stage::Cae, &base, &model.log);
                        save_checkpoint(&model.encoder.to_checkpoint(meta.clone()), dir.join("encoder.ckpt"))?;
                        save_checkpoint(&model.decoder.to_checkpoint(meta), dir.join("decoder.ckpt"))?;
                        model.log.write_jsonl(out.join("logs").join("cae").join(format!("{}.jsonl", split.test)))?;
                    }
                    progress(&format!(
                        "  cae reconstruction dice train {:.3} held-out {}",
                        row.train_dice.unwrap_or(f64::NAN),
                        row.heldout_dice.map_or("n/a".into(), |d| format!("{d:.3}"))
                    ));
                }
                Err(reason) => {
                    row.aborted = Some(reason.clone());
                    progress(&format!("  cae aborted: {reason}"));
                }
            }
            cae_rows.push(row);
            timing.insert(format!("{}/cae", split.test), clock.elapsed().as_secs_f64());
            cae = Some(result);
        }

        for &method in &cfg.methods {
            let clock = Instant::now();
            let mcfg = cfg.method_config(method);
            let encoder = match (&cae, method.uses_encoder()) {
                (Some(Ok(model)), true) => Some(&model.encoder),
                (Some(Err(reason)), true) => {
                    aborted.entry(method).or_default().push(AbortedCell {
                        subject_id: split.test.clone(),
                        reason: format!("auto-encoder stage: {reason}"),
                    });
                    continue;
                }
                _ => None,
            };
            let seg = match abort_or(train_segmenter(&pairs, encoder, &mcfg))? {
                Ok(seg) => seg,
                Err(reason) => {
                    progress(&format!("  {method} aborted: {reason}"));
                    aborted.entry(method).or_default().push(AbortedCell {
                        subject_id: split.test.clone(),
                        reason,
                    });
                    continue;
                }
            };
            let probs = predict_volume(&seg.generator, test_v, cfg.predict_batch_size)?;
            let pred = cfg.postproc.apply(&probs, test_v.spacing(), test_v.subject_id())?;
            let scores = score_subject(&pred, test_m)?;
            progress(&format!(
                "  {method}: dice {:.2} hd {}",
                scores.dice,
                scores.hausdorff.mm().map_or("undefined".into(), |h| format!("{h:.2} mm"))
            ));
            if let Some(out) = out {
                save_mask(&pred, out.join("predictions").join(method.name()).join(&split.test).join(MASK_FILE))?;
                let dir = out.join("checkpoints").join(method.name()).join(&split.test);
                let meta = training_meta(Stage::Segmenter, &mcfg, &seg.log);
                let g = dir.join("generator.ckpt");
                save_checkpoint(&seg.generator.to_checkpoint(meta.clone()), &g)?;
                checkpoints.entry(method).or_default().push(rel(out, &g));
                if let Some(d) = &seg.discriminator {
                    save_checkpoint(&d.to_checkpoint(meta), dir.join("discriminator.ckpt"))?;
                }
                seg.log
                    .write_jsonl(out.join("logs").join(method.name()).join(format!("{}.jsonl", split.test)))?;
            }
            cells.entry(method).or_default().push(scores);
            timing.insert(format!("{}/{method}", split.test), clock.elapsed().as_secs_f64());
        }
    }

    let rows = cfg
        .methods
        .iter()
        .map(|&method| {
            let scores = cells.remove(&method).unwrap_or_default();
            let provenance = Provenance::new(
                cfg.postproc.threshold,
                cfg.postproc.connectivity,
                checkpoints.remove(&method).unwrap_or_default(),
            );
            Ok(MethodRow {
                method,
                report: if scores.is_empty() { None } else { Some(aggregate(scores, provenance)?) },
                aborted: aborted.remove(&method).unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AblationTable {
        rows,
        splits,
        cae: cae_rows,
        provenance: RunProvenance {
            config: cfg.clone(),
            config_hash: config_hash(cfg)?,
            dataset_hash: dataset_hash(&ds),
            code_hash: CODE_HASH.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        timing_s: timing,
    })
}
