//! Experiment plumbing behind the command-line tool: dataset generation,
//! the leave-one-out ablation, standalone evaluation and reporting.

mod config;
mod loo;
mod report;
mod table;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::data::{
    extract_slices, generate_synthetic_dataset, load_dataset, load_mask, save_dataset, Dataset, SlicePair,
    SyntheticConfig, MASK_FILE,
};
use crate::metrics::{aggregate, score_subject, MetricsReport, Provenance};
use crate::networks::{load_checkpoint, save_checkpoint, Encoder, Role};
use crate::postproc::{largest_component, PostprocConfig};
use crate::trainer::{train_cae, train_segmenter, training_meta, Stage, TrainConfig};
use crate::{Error, Result};

pub use config::{read_toml, ExperimentConfig, MethodOverride};
pub use loo::{
    config_hash, dataset_hash, run_loo, select_subjects, AblationTable, AbortedCell, CaeSplit, MethodRow,
    RunProvenance, CODE_HASH,
};
pub use report::{contour, overlay, select_slices, write_overlays, BOTH_COLOR, GT_COLOR, PRED_COLOR};
pub use table::{to_csv, to_markdown, COLUMNS};

pub const TABLE_JSON: &str = "table.json";
pub const TABLE_MD: &str = "table.md";
pub const TABLE_CSV: &str = "table.csv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::binio::write_file(path, text.as_bytes())
}

/// Writes the dataset for `cfg` under `out` plus the config used, and
/// returns the subject ids.
pub fn gen_data(cfg: &SyntheticConfig, out: &Path) -> Result<Vec<String>> {
    let subjects = generate_synthetic_dataset(cfg)?;
    save_dataset(out, &subjects)?;
    write_text(
        &out.join("synthetic.toml"),
        &toml::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    Ok(subjects.iter().map(|(v, _)| v.subject_id().to_string()).collect())
}

fn mask_subjects(root: &Path) -> Result<BTreeSet<String>> {
    Ok(crate::data::subject_dirs(root)?
        .into_iter()
        .filter(|(_, dir)| dir.join(MASK_FILE).exists())
        .map(|(name, _)| name)
        .collect())
}

/// Scores `<pred>/<id>/mask.vol` against `<gt>/<id>/mask.vol` for every
/// subject. With `filter`, predictions first go through largest-component
/// selection at `post.connectivity`.
pub fn evaluate(pred: &Path, gt: &Path, post: &PostprocConfig, filter: bool) -> Result<MetricsReport> {
    post.validate()?;
    let p = mask_subjects(pred)?;
    let g = mask_subjects(gt)?;
    if p != g {
        let missing: Vec<&str> = g.difference(&p).map(String::as_str).collect();
        let extra: Vec<&str> = p.difference(&g).map(String::as_str).collect();
        return Err(Error::SubjectMismatch(format!(
            "no prediction for [{}]; no groundtruth for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if g.is_empty() {
        return Err(Error::EmptyDataset(format!("no subjects under {}", gt.display())));
    }
    let mut scores = Vec::with_capacity(g.len());
    for id in &g {
        let mut pm = load_mask(pred.join(id).join(MASK_FILE))?;
        let gm = load_mask(gt.join(id).join(MASK_FILE))?;
        if filter {
            pm = largest_component(&pm, post.connectivity);
        }
        scores.push(score_subject(&pm, &gm)?);
    }
    aggregate(scores, Provenance::new(post.threshold, post.connectivity, Vec::new()))
}

/// Runs the experiment and writes the table as JSON, Markdown and CSV
/// next to the predictions in `cfg.out`.
pub fn loo(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<AblationTable> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    let table = run_loo(cfg, &ds, Some(&cfg.out), progress)?;
    write_tables(&table, &cfg.out)?;
    write_text(&cfg.out.join("experiment.toml"), &cfg.to_toml()?)?;
    Ok(table)
}

pub fn write_tables(table: &AblationTable, dir: &Path) -> Result<()> {
    table.write_json(dir.join(TABLE_JSON))?;
    write_text(&dir.join(TABLE_MD), &to_markdown(table))?;
    write_text(&dir.join(TABLE_CSV), &to_csv(table)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub markdown: String,
    pub overlays: Vec<PathBuf>,
    /// `(method, subject)` pairs without a prediction on disk.
    pub skipped: Vec<(String, String)>,
}

/// Renders `table.json` into `out`: the tables, and for every method and
/// subject overlays of the `slices` largest groundtruth slices, read from
/// the predictions saved beside the table.
pub fn report(table_path: &Path, out: &Path, slices: usize) -> Result<ReportSummary> {
    let table = AblationTable::read_json(table_path)?;
    write_tables(&table, out)?;
    let markdown = to_markdown(&table);
    let predictions = table_path.parent().unwrap_or(Path::new(".")).join("predictions");
    let mut overlays = Vec::new();
    let mut skipped = Vec::new();
    let ds = if slices > 0 { Some(load_dataset(&table.provenance.config.dataset)?) } else { None };
    if let Some(ds) = ds {
        for row in &table.rows {
            for split in &table.splits {
                let path = predictions.join(row.method.name()).join(&split.test).join(MASK_FILE);
                let Some((img, gt)) = ds.get(&split.test) else {
                    skipped.push((row.method.to_string(), split.test.clone()));
                    continue;
                };
                if !path.exists() {
                    skipped.push((row.method.to_string(), split.test.clone()));
                    continue;
                }
                let pred = load_mask(&path)?;
                let dir = out.join("overlays").join(row.method.name());
                overlays.extend(write_overlays(img, gt, &pred, &select_slices(gt, slices), &dir)?);
            }
        }
    }
    Ok(ReportSummary {
        markdown,
        overlays,
        skipped,
    })
}

fn training_pairs(ds: &Dataset, subjects: Option<&[String]>) -> Result<Vec<SlicePair>> {
    let ds = select_subjects(ds, subjects)?;
    Ok(ds
        .subjects
        .iter()
        .map(|(v, m)| extract_slices(v, m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// Stage 1 on the masks of `subjects` (all when `None`); writes
/// `encoder.ckpt`, `decoder.ckpt` and `log.jsonl` to `out` and returns the
/// training-set reconstruction Dice.
pub fn train_cae_to(ds: &Dataset, subjects: Option<&[String]>, cfg: &TrainConfig, out: &Path) -> Result<f64> {
    let masks: Vec<_> = training_pairs(ds, subjects)?.into_iter().map(|p| p.mask).collect();
    let model = train_cae(&masks, cfg)?;
    let meta = training_meta(Stage::Cae, cfg, &model.log);
    save_checkpoint(&model.encoder.to_checkpoint(meta.clone()), out.join("encoder.ckpt"))?;
    save_checkpoint(&model.decoder.to_checkpoint(meta), out.join("decoder.ckpt"))?;
    model.log.write_jsonl(out.join("log.jsonl"))?;
    let non_empty: Vec<_> = masks.into_iter().filter(|m| m.iter().any(|&v| v == 1)).collect();
    model.reconstruction_dice(&non_empty)
}

/// Stage 2; writes `generator.ckpt`, `discriminator.ckpt` when used, and `log.jsonl`.
pub fn train_seg_to(
    ds: &Dataset,
    subjects: Option<&[String]>,
    encoder: Option<&Path>,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<()> {
    let pairs = training_pairs(ds, subjects)?;
    let f = match encoder {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            ckpt.expect_role(Role::Encoder)?;
            Some(Encoder::from_checkpoint(&ckpt)?)
        }
        None => None,
    };
    let seg = train_segmenter(&pairs, f.as_ref(), cfg)?;
    let meta = training_meta(Stage::Segmenter, cfg, &seg.log);
    save_checkpoint(&seg.generator.to_checkpoint(meta.clone()), out.join("generator.ckpt"))?;
    if let Some(d) = &seg.discriminator {
        save_checkpoint(&d.to_checkpoint(meta), out.join("discriminator.ckpt"))?;
    }
    seg.log.write_jsonl(out.join("log.jsonl"))
}
