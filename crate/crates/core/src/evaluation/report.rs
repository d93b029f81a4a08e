use std::fmt::Write as _;

use serde::Serialize;

use super::cv::{CVReport, LEAKAGE_WARNING};
use super::metrics::MetricsTriple;
use super::spec::{MethodId, Part, Protocol};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub method: MethodId,
    pub part: Part,
    pub protocol: Protocol,
    pub mean: MetricsTriple,
    pub std: MetricsTriple,
    pub best: bool,
    pub reference: Option<MetricsTriple>,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub dataset_hash: String,
    pub k: usize,
    pub rows: Vec<TableRow>,
    pub warnings: Vec<String>,
}

/// Orders reports as table rows, grouped by part, and flags the best mean F1.
pub fn aggregate_reports(reports: &[CVReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to aggregate".into()))?;
    for r in reports {
        if r.dataset_hash != first.dataset_hash {
            return Err(Error::InvalidArgument(format!(
                "reports cover different datasets ({} has {}, {} has {})",
                first.method, first.dataset_hash, r.method, r.dataset_hash
            )));
        }
        if r.k != first.k {
            return Err(Error::InvalidArgument(format!(
                "reports use different fold counts ({} vs {})",
                first.k, r.k
            )));
        }
    }
    let mut sorted: Vec<&CVReport> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.method.position(), r.protocol == Protocol::PaperFaithful, r.spec_hash.clone()));
    let mut rows: Vec<TableRow> = sorted
        .iter()
        .map(|r| TableRow {
            method: r.method,
            part: r.part,
            protocol: r.protocol,
            mean: r.mean,
            std: r.std,
            best: false,
            reference: r.method.reference(),
            spec_hash: r.spec_hash.clone(),
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, row)| match acc {
            Some((_, f)) if f >= row.mean.f1 => acc,
            _ => Some((i, row.mean.f1)),
        });
    if let Some((i, _)) = best {
        rows[i].best = true;
    }
    let mut warnings = Vec::new();
    for r in &sorted {
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    Ok(ComparisonTable {
        dataset_hash: first.dataset_hash.clone(),
        k: first.k,
        rows,
        warnings,
    })
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Part | Method | Protocol | Prec | Recall | F1 | Published F1 |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        let mut last_part = None;
        for row in &self.rows {
            let part = if last_part == Some(row.part) { "" } else { row.part.title() };
            last_part = Some(row.part);
            let mut f1 = pm(row.mean.f1, row.std.f1);
            let mut name = row.method.display_name().to_string();
            if row.best {
                f1 = format!("**{f1}**");
                name = format!("**{name}**");
            }
            let published = row.reference.map_or("-".to_string(), |m| format!("{:.3}", m.f1));
            let _ = writeln!(
                out,
                "| {part} | {name} | {} | {} | {} | {f1} | {published} |",
                row.protocol.as_str(),
                pm(row.mean.precision, row.std.precision),
                pm(row.mean.recall, row.std.recall),
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{}-fold cross-validation; dataset {}.", self.k, self.dataset_hash);
        for w in &self.warnings {
            let tag = if w == LEAKAGE_WARNING { "WARNING" } else { "Note" };
            let _ = writeln!(out, "\n> {tag}: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "part",
            "method_id",
            "method",
            "protocol",
            "precision_mean",
            "precision_std",
            "recall_mean",
            "recall_std",
            "f1_mean",
            "f1_std",
            "best",
            "published_f1",
            "spec_hash",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{:?}", r.part),
                r.method.as_str().to_string(),
                r.method.display_name().to_string(),
                r.protocol.as_str().to_string(),
                format!("{:.6}", r.mean.precision),
                format!("{:.6}", r.std.precision),
                format!("{:.6}", r.mean.recall),
                format!("{:.6}", r.std.recall),
                format!("{:.6}", r.mean.f1),
                format!("{:.6}", r.std.f1),
                r.best.to_string(),
                r.reference.map_or(String::new(), |m| format!("{:.3}", m.f1)),
                r.spec_hash.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
