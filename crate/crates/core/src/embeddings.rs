//! Word-vector tables, out-of-vocabulary handling and the cosine neighbor probe.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{fnv1a, mix_seed};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pretrained,
    /// Rows taken from a trained model's embedding layer.
    Learned(String),
}

/// Vocabulary → dense vector map. Rows are stored as `f32` so that full
/// pretrained tables fit in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    provenance: Provenance,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            provenance,
        }
    }

    /// Builds a table from `(word, vector)` pairs. Duplicate words keep the
    /// first vector.
    pub fn from_rows<I, S>(dim: usize, provenance: Provenance, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = EmbeddingTable::new(dim, provenance);
        for (i, (word, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "non-finite vector component".into(),
                });
            }
            table.push(word.into(), v.iter().map(|&x| x as f32));
        }
        Ok(table)
    }

    fn push(&mut self, word: String, v: impl IntoIterator<Item = f32>) -> bool {
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.extend(v);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// Writes the table in the plain-text `word v1 ... vd` format.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, word) in self.words.iter().enumerate() {
            let mut line = word.clone();
            for x in self.row(i) {
                write!(line, " {x}").unwrap();
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a whitespace-separated `word v1 ... vd` file.
pub fn load_embedding_table(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    load_filtered(path, expected_dim, None)
}

/// Like [`load_embedding_table`] but only keeps words in `keep`. Every line
/// is still validated.
pub fn load_embedding_table_for(
    path: &Path,
    expected_dim: usize,
    keep: &HashSet<String>,
) -> Result<EmbeddingTable> {
    load_filtered(path, expected_dim, Some(keep))
}

fn load_filtered(
    path: &Path,
    expected_dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_table(BufReader::new(file), expected_dim, keep)
}

pub fn read_embedding_table<R: BufRead>(
    reader: R,
    expected_dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(expected_dim, Provenance::Pretrained);
    let mut row = Vec::with_capacity(expected_dim);
    let mut duplicates = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        row.clear();
        for f in fields {
            let x: f32 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse `{f}` as a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite component `{f}`"),
                });
            }
            row.push(x);
        }
        if row.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected: expected_dim,
                found: row.len(),
            });
        }
        if keep.is_some_and(|k| !k.contains(word)) {
            continue;
        }
        if !table.push(word.to_string(), row.iter().copied()) {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate words in embedding file; first occurrence kept");
    }
    Ok(table)
}

/// What to return for a word missing from a table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OovPolicy {
    Zero,
    /// Uniform(-scale, scale) vector, fixed per (word, seed).
    Random { scale: f64, seed: u64 },
    /// The token is left out.
    Skip,
}

/// Deterministic uniform vector for `word`.
pub fn random_vector(word: &str, dim: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(word)));
    (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect()
}

/// Vector for `token`, or `None` when the policy skips it.
pub fn lookup(table: &EmbeddingTable, token: &str, policy: OovPolicy) -> Option<Vec<f64>> {
    if let Some(v) = table.get(token) {
        return Some(v.iter().map(|&x| f64::from(x)).collect());
    }
    match policy {
        OovPolicy::Zero => Some(vec![0.0; table.dim()]),
        OovPolicy::Random { scale, seed } => Some(random_vector(token, table.dim(), scale, seed)),
        OovPolicy::Skip => None,
    }
}

/// dot(u, v) / (|u| |v|), or 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

/// The `n` words most cosine-similar to `word`, excluding `word` itself.
/// Ties are broken by lexicographic word order.
pub fn nearest_neighbors(table: &EmbeddingTable, word: &str, n: usize) -> Result<Vec<(String, f64)>> {
    let q = table
        .index_of(word)
        .ok_or_else(|| Error::NotFound(word.to_string()))?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let query: Vec<f64> = table.row(q).iter().map(|&x| f64::from(x)).collect();
    let mut scored: Vec<(usize, f64)> = (0..table.len())
        .filter(|&i| i != q)
        .map(|i| {
            let row: Vec<f64> = table.row(i).iter().map(|&x| f64::from(x)).collect();
            (i, cosine(&query, &row))
        })
        .collect();
    let words = table.words();
    let order = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1).then_with(|| words[a.0].cmp(&words[b.0]))
    };
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, order);
        scored.truncate(n);
    }
    scored.sort_by(order);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (words[i].clone(), s))
        .collect())
}

/// Neighbor lists for a set of probe words across one or more tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub n: usize,
    pub columns: Vec<String>,
    pub rows: Vec<NeighborRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRow {
    pub word: String,
    /// One cell per column; `None` when the word is absent from that table.
    pub cells: Vec<Option<Vec<(String, f64)>>>,
}

impl NeighborReport {
    pub fn build(tables: &[(&str, &EmbeddingTable)], words: &[String], n: usize) -> Self {
        let rows = words
            .iter()
            .map(|w| NeighborRow {
                word: w.clone(),
                cells: tables
                    .iter()
                    .map(|(_, t)| nearest_neighbors(t, w, n).ok())
                    .collect(),
            })
            .collect();
        NeighborReport {
            n,
            columns: tables.iter().map(|(name, _)| name.to_string()).collect(),
            rows,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Target word |");
        for c in &self.columns {
            write!(out, " {c} |").unwrap();
        }
        out.push_str("\n|---|");
        for _ in &self.columns {
            out.push_str("---|");
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "| {} |", row.word).unwrap();
            for cell in &row.cells {
                match cell {
                    Some(list) => {
                        let joined: Vec<&str> = list.iter().map(|(w, _)| w.as_str()).collect();
                        write!(out, " {} |", joined.join(", ")).unwrap();
                    }
                    None => out.push_str(" absent |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Side-by-side neighbor lists from a pretrained and a learned table.
pub fn neighbor_diff_report(
    pretrained: &EmbeddingTable,
    learned: &EmbeddingTable,
    words: &[String],
    n: usize,
) -> NeighborReport {
    NeighborReport::build(&[("pretrained", pretrained), ("learned", learned)], words, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EmbeddingTable {
        EmbeddingTable::from_rows(
            2,
            Provenance::Pretrained,
            [
                ("a", vec![1.0, 0.0]),
                ("b", vec![1.0, 0.0]),
                ("c", vec![0.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn loads_text_fixture() {
        let src = "the 0.1 0.2 0.3 0.4\ncat 1 2 3 4\nthe 9 9 9 9\n\ndog -1 -2 -3 -4e-1\n";
        let t = read_embedding_table(src.as_bytes(), 4, None).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 4);
        assert_eq!(t.get("the").unwrap(), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(t.get("dog").unwrap()[3], -0.4);
    }

    #[test]
    fn wrong_dimension_reports_line() {
        let src = "the 0.1 0.2 0.3 0.4\n";
        match read_embedding_table(src.as_bytes(), 200, None).unwrap_err() {
            Error::DimensionMismatch { line, expected, found } => {
                assert_eq!((line, expected, found), (1, 200, 4));
            }
            e => panic!("unexpected {e:?}"),
        }
        let src = "a 1 2\nb 1 NaN\n";
        assert!(matches!(
            read_embedding_table(src.as_bytes(), 2, None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn lookup_policies() {
        let t = toy();
        assert_eq!(lookup(&t, "c", OovPolicy::Skip), Some(vec![0.0, 1.0]));
        assert_eq!(lookup(&t, "zzqx", OovPolicy::Zero), Some(vec![0.0, 0.0]));
        assert_eq!(lookup(&t, "zzqx", OovPolicy::Skip), None);
        let p = OovPolicy::Random { scale: 0.25, seed: 7 };
        let first = lookup(&t, "zzqx", p).unwrap();
        assert_eq!(first, lookup(&t, "zzqx", p).unwrap());
        assert!(first.iter().all(|x| x.abs() <= 0.25));
        assert_ne!(first, lookup(&t, "other", p).unwrap());
    }

    #[test]
    fn toy_neighbors() {
        let t = toy();
        let nn = nearest_neighbors(&t, "a", 2).unwrap();
        assert_eq!(nn, vec![("b".to_string(), 1.0), ("c".to_string(), 0.0)]);
        assert!(matches!(nearest_neighbors(&t, "q", 2), Err(Error::NotFound(_))));
        let single = EmbeddingTable::from_rows(2, Provenance::Pretrained, [("x", vec![1.0, 1.0])])
            .unwrap();
        assert!(nearest_neighbors(&single, "x", 5).unwrap().is_empty());
    }

    #[test]
    fn zero_norm_similarity_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[-1.0, -2.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn diff_report_marks_absent_words() {
        let pre = toy();
        let learned = EmbeddingTable::from_rows(
            2,
            Provenance::Learned("lstm".into()),
            [("a", vec![0.0, 1.0]), ("c", vec![0.0, 2.0]), ("b", vec![1.0, 0.0])],
        )
        .unwrap();
        let words = vec!["a".to_string(), "missing".to_string()];
        let r = neighbor_diff_report(&pre, &learned, &words, 1);
        assert_eq!(r.rows[0].cells[0].as_ref().unwrap()[0].0, "b");
        assert_eq!(r.rows[0].cells[1].as_ref().unwrap()[0].0, "c");
        assert!(r.rows[1].cells.iter().all(Option::is_none));
        let md = r.to_markdown();
        assert!(md.contains("| a | b | c |"));
        assert!(md.contains("| missing | absent | absent |"));
    }
}
