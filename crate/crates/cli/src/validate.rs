use std::fs::File;
use std::io::{BufRead, BufReader};

use hatebench::corpus::{load_dataset, Dataset, Label};
use hatebench::embeddings::read_embedding_table;
use hatebench::evaluation::{ExperimentSpec, Pipeline};

use crate::config::RunConfig;

/// Lines of the embedding file parsed during validation.
const HEADER_SAMPLE: usize = 5;

pub struct Validated {
    pub specs: Vec<ExperimentSpec>,
    pub dataset: Dataset,
}

/// Checks everything that can be checked without training. Returns every
/// problem found, not just the first.
pub fn validate(cfg: &RunConfig) -> Result<Validated, Vec<String>> {
    let mut problems = Vec::new();
    let specs = cfg.build_specs().unwrap_or_else(|e| {
        problems.extend(e);
        Vec::new()
    });

    let dataset = match cfg.data_format() {
        Err(e) => {
            problems.push(e);
            None
        }
        Ok(format) => match load_dataset(&cfg.dataset.path, format) {
            Ok(d) => Some(d),
            Err(e) => {
                problems.push(format!("{}: {e}", cfg.dataset.path.display()));
                None
            }
        },
    };
    if let Some(ds) = &dataset {
        for label in Label::ALL {
            let n = ds.class_count(label);
            if n > 0 && n < cfg.run.k {
                problems.push(format!(
                    "{}: class {} has {n} examples, fewer than k = {}",
                    cfg.dataset.path.display(),
                    label.name(),
                    cfg.run.k
                ));
            }
        }
    }

    let needs_table: Vec<&ExperimentSpec> = specs.iter().filter(|s| s.method.needs_pretrained()).collect();
    match &cfg.embeddings {
        None if !needs_table.is_empty() => {
            let ids: Vec<String> = needs_table.iter().map(|s| s.method.to_string()).collect();
            problems.push(format!(
                "{} need pretrained vectors but no [embeddings] section is given",
                ids.join(", ")
            ));
        }
        None => {}
        Some(emb) => {
            if let Err(e) = check_embedding_header(&emb.path, emb.dim) {
                problems.push(e);
            }
            for s in &needs_table {
                let neural = !matches!(s.method.pipeline(), Pipeline::Classic(..));
                if neural && s.neural.embedding_dim != emb.dim {
                    problems.push(format!(
                        "{}: neural.embedding_dim = {} but embeddings.dim = {}",
                        s.method, s.neural.embedding_dim, emb.dim
                    ));
                }
            }
        }
    }

    match dataset {
        Some(dataset) if problems.is_empty() => Ok(Validated { specs, dataset }),
        _ => Err(problems),
    }
}

fn check_embedding_header(path: &std::path::Path, dim: usize) -> Result<(), String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut sample = String::new();
    for line in BufReader::new(file).lines().take(HEADER_SAMPLE) {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        sample.push_str(&line);
        sample.push('\n');
    }
    let table = read_embedding_table(sample.as_bytes(), dim, None).map_err(|e| format!("{}: {e}", path.display()))?;
    if table.is_empty() {
        return Err(format!("{}: no vectors found", path.display()));
    }
    Ok(())
}
