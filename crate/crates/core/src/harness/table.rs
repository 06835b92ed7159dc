use crate::metrics::{MeanStd, MetricsReport};
use crate::{Error, Result};

use super::AblationTable;

/// Column titles of the rendered table, after the method column.
pub const COLUMNS: [&str; 5] = ["Dice (%)", "Sensitivity (%)", "Specificity (%)", "Jaccard (%)", "HD (mm)"];

fn column(r: &MetricsReport, k: usize) -> Option<MeanStd> {
    match k {
        0 => Some(r.dice),
        1 => Some(r.sensitivity),
        2 => Some(r.specificity),
        3 => Some(r.jaccard),
        _ => r.hausdorff_mm,
    }
}

fn cell(m: Option<MeanStd>) -> String {
    m.map_or("n/a".into(), |m| format!("{:.2} ± {:.2}", m.mean, m.std))
}

/// Row indices holding the best mean of column `k`, compared at the
/// printed precision so visible ties are all marked.
fn best_rows(t: &AblationTable, k: usize) -> Vec<usize> {
    let shown: Vec<Option<i64>> = t
        .rows
        .iter()
        .map(|r| r.report.as_ref().and_then(|rep| column(rep, k)).map(|m| (m.mean * 100.0).round() as i64))
        .collect();
    let lower_is_better = k == 4;
    let best = shown.iter().flatten().copied().reduce(|a, b| if lower_is_better { a.min(b) } else { a.max(b) });
    shown
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some() && **v == best)
        .map(|(i, _)| i)
        .collect()
}

/// Markdown mean ± std table, best value per column in bold.
pub fn to_markdown(t: &AblationTable) -> String {
    let best: Vec<Vec<usize>> = (0..COLUMNS.len()).map(|k| best_rows(t, k)).collect();
    let mut s = format!("| Method | {} |\n|---|{}\n", COLUMNS.join(" | "), "---|".repeat(COLUMNS.len()));
    for (i, row) in t.rows.iter().enumerate() {
        s.push_str(&format!("| {} |", row.method));
        for (k, b) in best.iter().enumerate() {
            let text = cell(row.report.as_ref().and_then(|r| column(r, k)));
            if b.contains(&i) {
                s.push_str(&format!(" **{text}** |"));
            } else {
                s.push_str(&format!(" {text} |"));
            }
        }
        s.push('\n');
    }
    let notes: Vec<String> = t
        .rows
        .iter()
        .filter_map(|r| {
            let undefined = r.report.as_ref().map_or(0, |rep| rep.hausdorff_undefined);
            let mut parts = Vec::new();
            if undefined > 0 {
                parts.push(format!("{undefined} subject(s) with undefined HD"));
            }
            if !r.aborted.is_empty() {
                let ids: Vec<&str> = r.aborted.iter().map(|a| a.subject_id.as_str()).collect();
                parts.push(format!("aborted on {}", ids.join(", ")));
            }
            (!parts.is_empty()).then(|| format!("- {}: {}", r.method, parts.join("; ")))
        })
        .collect();
    if !notes.is_empty() {
        s.push('\n');
        s.push_str(&notes.join("\n"));
        s.push('\n');
    }
    s
}

/// One line per method with mean and std of every column.
pub fn to_csv(t: &AblationTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names = ["dice", "sensitivity", "specificity", "jaccard", "hausdorff_mm"];
    let mut header = vec!["method".to_string()];
    for n in names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    header.extend(["n_subjects".into(), "hausdorff_undefined".into(), "aborted".into()]);
    let err = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(&header).map_err(err)?;
    for row in &t.rows {
        let mut rec = vec![row.method.to_string()];
        for k in 0..names.len() {
            match row.report.as_ref().and_then(|r| column(r, k)) {
                Some(m) => rec.extend([m.mean.to_string(), m.std.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
        }
        let rep = row.report.as_ref();
        rec.push(rep.map_or(0, |r| r.subjects.len()).to_string());
        rec.push(rep.map_or(0, |r| r.hausdorff_undefined).to_string());
        rec.push(row.aborted.len().to_string());
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
