//! The `run` command: executes every spec of a config, writing reports,
//! training logs, checkpoints and the comparison table.
//!
//! Layout of a run directory:
//!
//! ```text
//! <root>/run-<config hash, 12 hex>/
//!   config.json           resolved configuration
//!   manifest.json         timestamps and per-spec status, one entry per invocation
//!   reports/<KEY>.json    one CVReport per spec
//!   logs/<KEY>/<fold>-<net>.jsonl
//!   checkpoints/<KEY>/<fold>-<net>/
//!   table.md, table.csv
//! ```
//!
//! `KEY` is the method id followed by the first 12 hex digits of the spec
//! hash. Reports are never rewritten; a spec whose report already exists is
//! skipped.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use hatebench::corpus::{tokenize_dataset, Dataset};
use hatebench::embeddings::{load_embedding_table_for, EmbeddingTable};
use hatebench::evaluation::{aggregate_reports, run_cv_with, CVReport, CvHooks, ExperimentSpec};
use hatebench::neural::TrainedNeuralModel;
use hatebench::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{CheckpointPolicy, RunConfig};
use crate::validate::Validated;

pub const MANIFEST_SCHEMA: &str = "hatebench.run_manifest.v1";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config_hash: String,
    pub created_at: String,
    pub invocations: Vec<Invocation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Invocation {
    pub started_at: String,
    pub finished_at: Option<String>,
    pub dataset_hash: String,
    pub specs: Vec<SpecStatus>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpecStatus {
    pub key: String,
    pub method: String,
    pub spec_hash: String,
    /// `completed`, `skipped` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub table_markdown: Option<String>,
}

pub fn spec_key(spec: &ExperimentSpec) -> String {
    format!("{}-{}", spec.method, &spec.hash()[..12])
}

pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_root().join(format!("run-{}", &cfg.hash()[..12]))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fold_name(fold: Option<usize>) -> String {
    fold.map_or("full".to_string(), |f| format!("fold{f}"))
}

enum Msg {
    Model {
        spec: usize,
        fold: Option<usize>,
        model: Box<TrainedNeuralModel>,
    },
    Done {
        spec: usize,
        result: Result<CVReport>,
    },
}

/// Loads only the vectors of words that occur in the dataset under the
/// tokenizers the specs use.
fn load_pretrained(cfg: &RunConfig, specs: &[ExperimentSpec], dataset: &Dataset) -> Result<Option<EmbeddingTable>> {
    let users: Vec<&ExperimentSpec> = specs.iter().filter(|s| s.method.needs_pretrained()).collect();
    let Some(emb) = cfg.embeddings.as_ref().filter(|_| !users.is_empty()) else {
        return Ok(None);
    };
    let mut keep = HashSet::new();
    let mut policies = Vec::new();
    for s in users {
        if !policies.contains(&s.tokenizer) {
            policies.push(s.tokenizer.clone());
            for seq in tokenize_dataset(dataset, &s.tokenizer) {
                keep.extend(seq.0);
            }
        }
    }
    log::info!("loading vectors for {} distinct tokens from {}", keep.len(), emb.path.display());
    let table = load_embedding_table_for(&emb.path, emb.dim, &keep)?;
    log::info!("{} of them found", table.len());
    Ok(Some(table))
}

pub fn cmd_run(cfg: &RunConfig, validated: Validated) -> Result<RunSummary> {
    let Validated { specs, dataset } = validated;
    let dir = run_dir(cfg);
    let config_hash = cfg.hash();
    let dataset_hash = dataset.content_hash();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join("config.json");
    if !config_path.exists() {
        write(&config_path, (serde_json::to_string_pretty(cfg)? + "\n").as_bytes())?;
    }
    let manifest_path = dir.join("manifest.json");
    let mut manifest = match fs::read_to_string(&manifest_path) {
        Ok(s) => serde_json::from_str::<Manifest>(&s)?,
        Err(_) => Manifest {
            schema: MANIFEST_SCHEMA.into(),
            config_hash: config_hash.clone(),
            created_at: now(),
            invocations: Vec::new(),
        },
    };
    let mut invocation = Invocation {
        started_at: now(),
        finished_at: None,
        dataset_hash: dataset_hash.clone(),
        specs: Vec::new(),
    };
    log::info!("run directory {}", dir.display());

    let keys: Vec<String> = specs.iter().map(spec_key).collect();
    let report_path = |i: usize| dir.join("reports").join(format!("{}.json", keys[i]));
    let mut pending = Vec::new();
    let mut reports: Vec<Option<CVReport>> = vec![None; specs.len()];
    let mut summary = RunSummary {
        dir: dir.clone(),
        completed: 0,
        skipped: 0,
        failed: 0,
        table_markdown: None,
    };
    for (i, spec) in specs.iter().enumerate() {
        let path = report_path(i);
        let Ok(text) = fs::read_to_string(&path) else {
            pending.push(i);
            continue;
        };
        let mut status = SpecStatus {
            key: keys[i].clone(),
            method: spec.method.to_string(),
            spec_hash: spec.hash(),
            status: "skipped".into(),
            error: None,
            wall_time_secs: None,
            finished_at: None,
        };
        match CVReport::from_json(&text) {
            Ok(r) if r.spec_hash == status.spec_hash && r.dataset_hash == dataset_hash => {
                log::info!("{}: report exists, skipping", keys[i]);
                reports[i] = Some(r);
                summary.skipped += 1;
            }
            Ok(_) => {
                status.status = "failed".into();
                status.error = Some(format!(
                    "{} was produced from a different dataset; use a fresh output directory",
                    path.display()
                ));
                summary.failed += 1;
            }
            Err(e) => {
                status.status = "failed".into();
                status.error = Some(format!("{}: {e}", path.display()));
                summary.failed += 1;
            }
        }
        if let Some(e) = &status.error {
            log::error!("{}: {e}", keys[i]);
        }
        invocation.specs.push(status);
    }

    let pretrained = if pending.is_empty() {
        None
    } else {
        let chosen: Vec<ExperimentSpec> = pending.iter().map(|&i| specs[i].clone()).collect();
        load_pretrained(cfg, &chosen, &dataset)?
    };
    let policy = cfg.run.checkpoints;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Msg>();
    let mut started = vec![Instant::now(); specs.len()];

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.run.jobs.min(pending.len()) {
            let tx = tx.clone();
            let (next, pending, specs, dataset, pretrained) = (&next, &pending, &specs, &dataset, &pretrained);
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(slot) else { break };
                let model_tx = tx.clone();
                let on_model = move |fold: Option<usize>, m: &TrainedNeuralModel| {
                    let _ = model_tx.send(Msg::Model {
                        spec: i,
                        fold,
                        model: Box::new(m.clone()),
                    });
                };
                let hooks = CvHooks {
                    on_fit: None,
                    on_model: Some(&on_model),
                };
                let result = run_cv_with(&specs[i], dataset, pretrained.as_ref(), hooks);
                let _ = tx.send(Msg::Done { spec: i, result });
            });
        }
        drop(tx);
        for &i in &pending {
            started[i] = Instant::now();
            log::info!("{}: queued", keys[i]);
        }
        // The writer: the only code that touches the run directory while
        // workers are running.
        for msg in rx {
            match msg {
                Msg::Model { spec, fold, model } => {
                    let name = format!("{}-{}", fold_name(fold), model.name());
                    let base = &keys[spec];
                    write(
                        &dir.join("logs").join(base).join(format!("{name}.jsonl")),
                        model.log_jsonl().as_bytes(),
                    )?;
                    let keep = match policy {
                        CheckpointPolicy::None => false,
                        CheckpointPolicy::FirstFold => fold.is_none_or(|f| f == 0),
                        CheckpointPolicy::All => true,
                    };
                    if keep {
                        model.save(&dir.join("checkpoints").join(base).join(&name))?;
                    }
                }
                Msg::Done { spec, result } => {
                    let mut status = SpecStatus {
                        key: keys[spec].clone(),
                        method: specs[spec].method.to_string(),
                        spec_hash: specs[spec].hash(),
                        status: "completed".into(),
                        error: None,
                        wall_time_secs: None,
                        finished_at: Some(now()),
                    };
                    match result {
                        Ok(mut report) => {
                            report.config_hash = Some(config_hash.clone());
                            status.wall_time_secs = Some(report.wall_time_secs);
                            write(&report_path(spec), report.to_json()?.as_bytes())?;
                            log::info!(
                                "{}: F1 {:.3} ± {:.3} in {:.1}s",
                                keys[spec],
                                report.mean.f1,
                                report.std.f1,
                                started[spec].elapsed().as_secs_f64()
                            );
                            for w in &report.warnings {
                                log::warn!("{}: {w}", keys[spec]);
                            }
                            reports[spec] = Some(report);
                            summary.completed += 1;
                        }
                        Err(e) => {
                            log::error!("{}: {e}", keys[spec]);
                            status.status = "failed".into();
                            status.error = Some(e.to_string());
                            summary.failed += 1;
                        }
                    }
                    invocation.specs.push(status);
                }
            }
        }
        Ok(())
    })?;

    let done: Vec<CVReport> = reports.into_iter().flatten().collect();
    if !done.is_empty() {
        let table = aggregate_reports(&done)?;
        let md = table.to_markdown();
        write(&dir.join("table.md"), md.as_bytes())?;
        write(&dir.join("table.csv"), table.to_csv()?.as_bytes())?;
        summary.table_markdown = Some(md);
    }
    invocation.finished_at = Some(now());
    manifest.invocations.push(invocation);
    write(&manifest_path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
    Ok(summary)
}
