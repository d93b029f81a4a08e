use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use hatebench::embeddings::{
    load_embedding_table, neighbor_diff_report, read_embedding_table, EmbeddingTable, NeighborReport,
};
use hatebench::evaluation::{aggregate_reports, CVReport, ComparisonTable};
use hatebench::neural::TrainedNeuralModel;
use hatebench::{Error, Result};

/// Reads a pretrained table, keeping only the first `limit` lines when set.
/// Common vector releases are sorted by frequency, so a prefix holds the
/// frequent words.
pub fn read_table(path: &Path, dim: usize, limit: Option<usize>) -> Result<EmbeddingTable> {
    let Some(limit) = limit else {
        return load_embedding_table(path, dim);
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines().take(limit) {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    read_embedding_table(text.as_bytes(), dim, None)
}

pub struct NeighborArgs<'a> {
    pub table: Option<(&'a Path, usize, Option<usize>)>,
    pub checkpoint: Option<&'a Path>,
    pub words: &'a [String],
    pub n: usize,
}

pub fn cmd_neighbors(args: &NeighborArgs<'_>) -> Result<NeighborReport> {
    let pretrained = args
        .table
        .map(|(path, dim, limit)| read_table(path, dim, limit))
        .transpose()?;
    let learned = args
        .checkpoint
        .map(|dir| TrainedNeuralModel::load(dir).map(|m| m.extract_embeddings()))
        .transpose()?;
    let words: Vec<String> = args.words.iter().map(|w| w.to_lowercase()).collect();
    Ok(match (&pretrained, &learned) {
        (Some(p), Some(l)) => neighbor_diff_report(p, l, &words, args.n),
        (Some(p), None) => NeighborReport::build(&[("pretrained", p)], &words, args.n),
        (None, Some(l)) => NeighborReport::build(&[("learned", l)], &words, args.n),
        (None, None) => {
            return Err(Error::Config("neighbors needs --table, --checkpoint or both".into()));
        }
    })
}

/// Collects report JSON files: directories are searched for a `reports`
/// subdirectory, or for `*.json` directly.
pub fn collect_reports(paths: &[PathBuf]) -> Result<Vec<CVReport>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let dir = if p.join("reports").is_dir() { p.join("reports") } else { p.clone() };
            let mut found: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            CVReport::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", f.display())))
        })
        .collect()
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<ComparisonTable> {
    let reports = collect_reports(paths)?;
    aggregate_reports(&reports)
}
