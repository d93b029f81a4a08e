//! Baseline feature extractors: character n-grams, word TF-IDF and averaged
//! word vectors (BoWV).
//!
//! Every fitted extractor learns its vocabulary from the texts it is given
//! and nothing else; callers pass training-fold texts only.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::embeddings::{lookup, EmbeddingTable, OovPolicy};
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(n_cols: usize, rows: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged dense rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            n_rows: rows.len(),
            n_cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Compressed sparse rows; column indices are strictly increasing per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(n_cols: usize) -> Self {
        CsrMatrix {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a row given as `(column, value)` pairs sorted by column.
    pub fn push_row(&mut self, entries: &[(u32, f64)]) {
        for &(c, v) in entries {
            debug_assert!((c as usize) < self.n_cols);
            self.indices.push(c);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

/// Row-per-example features with a tag describing where the columns came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub storage: Storage,
    pub provenance: String,
}

/// Borrowed view of one feature row.
#[derive(Clone, Copy, Debug)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse(&'a [u32], &'a [f64]),
}

impl Row<'_> {
    pub fn dot(&self, w: &[f64]) -> f64 {
        match *self {
            Row::Dense(x) => x.iter().zip(w).map(|(a, b)| a * b).sum(),
            Row::Sparse(idx, val) => idx.iter().zip(val).map(|(&c, v)| v * w[c as usize]).sum(),
        }
    }

    /// `w += alpha * x`
    pub fn axpy(&self, alpha: f64, w: &mut [f64]) {
        match *self {
            Row::Dense(x) => {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += alpha * xi;
                }
            }
            Row::Sparse(idx, val) => {
                for (&c, v) in idx.iter().zip(val) {
                    w[c as usize] += alpha * v;
                }
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        match *self {
            Row::Dense(x) => x.iter().map(|v| v * v).sum(),
            Row::Sparse(_, val) => val.iter().map(|v| v * v).sum(),
        }
    }

    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, f64)) {
        match *self {
            Row::Dense(x) => {
                for (c, &v) in x.iter().enumerate() {
                    if v != 0.0 {
                        f(c, v);
                    }
                }
            }
            Row::Sparse(idx, val) => {
                for (&c, &v) in idx.iter().zip(val) {
                    f(c as usize, v);
                }
            }
        }
    }
}

impl FeatureMatrix {
    pub fn dense(m: DenseMatrix, provenance: impl Into<String>) -> Self {
        FeatureMatrix {
            storage: Storage::Dense(m),
            provenance: provenance.into(),
        }
    }

    pub fn sparse(m: CsrMatrix, provenance: impl Into<String>) -> Self {
        FeatureMatrix {
            storage: Storage::Sparse(m),
            provenance: provenance.into(),
        }
    }

    pub fn n_rows(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.n_rows,
            Storage::Sparse(m) => m.n_rows(),
        }
    }

    pub fn n_cols(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.n_cols,
            Storage::Sparse(m) => m.n_cols,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Dense(m) => Row::Dense(m.row(i)),
            Storage::Sparse(m) => {
                let (idx, val) = m.row(i);
                Row::Sparse(idx, val)
            }
        }
    }

    /// First non-finite entry, if any, as `(row, column)`.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        for i in 0..self.n_rows() {
            let mut bad = None;
            self.row(i).for_each_nonzero(|c, v| {
                if bad.is_none() && !v.is_finite() {
                    bad = Some(c);
                }
            });
            if let Some(c) = bad {
                return Some((i, c));
            }
        }
        None
    }
}

/// Every contiguous character substring of length `n_min..=n_max`, with
/// multiplicity. The text is lowercased first; spaces are kept.
pub fn char_ngrams(text: &str, n_min: usize, n_max: usize) -> BTreeMap<String, usize> {
    assert!(n_min >= 1 && n_min <= n_max, "invalid n-gram range");
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = BTreeMap::new();
    for n in n_min..=n_max {
        if chars.len() < n {
            break;
        }
        for w in chars.windows(n) {
            *out.entry(w.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    out
}

/// Character n-gram vocabulary; columns in lexicographic gram order.
#[derive(Clone, Debug, PartialEq)]
pub struct CharNgramVocab {
    pub n_min: usize,
    pub n_max: usize,
    pub min_doc_freq: usize,
    grams: Vec<String>,
    doc_freq: Vec<usize>,
    index: HashMap<String, usize>,
}

pub fn fit_char_vocab(
    train_texts: &[&str],
    n_min: usize,
    n_max: usize,
    min_doc_freq: usize,
) -> Result<CharNgramVocab> {
    if train_texts.is_empty() {
        return Err(Error::InvalidArgument("cannot fit n-gram vocabulary on an empty corpus".into()));
    }
    if n_min == 0 || n_min > n_max {
        return Err(Error::InvalidArgument(format!("bad n-gram range {n_min}..={n_max}")));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in train_texts {
        for gram in char_ngrams(text, n_min, n_max).into_keys() {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let (grams, doc_freq): (Vec<String>, Vec<usize>) =
        df.into_iter().filter(|&(_, d)| d >= min_doc_freq).unzip();
    if grams.is_empty() {
        log::warn!("char n-gram vocabulary is empty (min_doc_freq = {min_doc_freq})");
    }
    let index = grams.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
    Ok(CharNgramVocab {
        n_min,
        n_max,
        min_doc_freq,
        grams,
        doc_freq,
        index,
    })
}

impl CharNgramVocab {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn grams(&self) -> &[String] {
        &self.grams
    }

    pub fn column(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }

    /// Raw n-gram counts restricted to the vocabulary.
    pub fn transform(&self, text: &str) -> Vec<(u32, f64)> {
        let mut row: Vec<(u32, f64)> = char_ngrams(text, self.n_min, self.n_max)
            .into_iter()
            .filter_map(|(g, c)| self.column(&g).map(|i| (i as u32, c as f64)))
            .collect();
        row.sort_by_key(|e| e.0);
        row
    }

    pub fn transform_many(&self, texts: &[&str]) -> FeatureMatrix {
        let mut m = CsrMatrix::new(self.len());
        for t in texts {
            m.push_row(&self.transform(t));
        }
        FeatureMatrix::sparse(m, "char_ngram")
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = VocabDocument {
            schema: "hatebench.char_ngram_vocab.v1".into(),
            n_min: Some(self.n_min),
            n_max: Some(self.n_max),
            min_doc_freq: Some(self.min_doc_freq),
            n_docs: None,
            norm: None,
            terms: self
                .grams
                .iter()
                .zip(&self.doc_freq)
                .enumerate()
                .map(|(i, (g, &df))| TermEntry {
                    term: g.clone(),
                    index: i,
                    df,
                    idf: None,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    None,
}

/// Word TF-IDF with smoothed idf: `ln((1 + N) / (1 + df)) + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
    pub norm: Norm,
}

pub fn fit_tfidf(train_token_seqs: &[TokenSequence]) -> Result<TfidfModel> {
    fit_tfidf_with_norm(train_token_seqs, Norm::L2)
}

pub fn fit_tfidf_with_norm(train_token_seqs: &[TokenSequence], norm: Norm) -> Result<TfidfModel> {
    if train_token_seqs.is_empty() {
        return Err(Error::InvalidArgument("cannot fit TF-IDF on an empty corpus".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in train_token_seqs {
        let distinct: HashSet<&str> = seq.iter().collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = train_token_seqs.len() as f64;
    let mut terms = Vec::with_capacity(df.len());
    let mut doc_freq = Vec::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (t, d) in df {
        terms.push(t.to_string());
        doc_freq.push(d);
        idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
    }
    let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(TfidfModel {
        terms,
        index,
        doc_freq,
        idf,
        n_docs: train_token_seqs.len(),
        norm,
    })
}

impl TfidfModel {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.column(term).map(|i| self.idf[i])
    }

    /// `count(t) * idf(t)` for known terms, optionally L2-normalized.
    pub fn transform(&self, tokens: &TokenSequence) -> Vec<(u32, f64)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens.iter() {
            if let Some(c) = self.column(t) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        let mut row: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(c, n)| (c as u32, n as f64 * self.idf[c]))
            .collect();
        if self.norm == Norm::L2 {
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in &mut row {
                    e.1 /= norm;
                }
            }
        }
        row
    }

    pub fn transform_many(&self, seqs: &[TokenSequence]) -> FeatureMatrix {
        let mut m = CsrMatrix::new(self.len());
        for s in seqs {
            m.push_row(&self.transform(s));
        }
        FeatureMatrix::sparse(m, "tfidf")
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = VocabDocument {
            schema: "hatebench.tfidf.v1".into(),
            n_min: None,
            n_max: None,
            min_doc_freq: None,
            n_docs: Some(self.n_docs),
            norm: Some(self.norm),
            terms: self
                .terms
                .iter()
                .enumerate()
                .map(|(i, t)| TermEntry {
                    term: t.clone(),
                    index: i,
                    df: self.doc_freq[i],
                    idf: Some(self.idf[i]),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: VocabDocument = serde_json::from_str(s)?;
        if doc.schema != "hatebench.tfidf.v1" {
            return Err(Error::Config(format!("unexpected schema `{}`", doc.schema)));
        }
        let mut terms = Vec::with_capacity(doc.terms.len());
        let mut doc_freq = Vec::with_capacity(doc.terms.len());
        let mut idf = Vec::with_capacity(doc.terms.len());
        for (i, e) in doc.terms.into_iter().enumerate() {
            if e.index != i {
                return Err(Error::Config(format!("term `{}` has index {} at position {i}", e.term, e.index)));
            }
            terms.push(e.term);
            doc_freq.push(e.df);
            idf.push(e.idf.ok_or_else(|| Error::Config("missing idf".into()))?);
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(TfidfModel {
            terms,
            index,
            doc_freq,
            idf,
            n_docs: doc.n_docs.unwrap_or(0),
            norm: doc.norm.unwrap_or(Norm::L2),
        })
    }
}

/// On-disk form of a fitted vocabulary (`term`, `index`, `df`, `idf`).
#[derive(Debug, Serialize, Deserialize)]
struct VocabDocument {
    schema: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_doc_freq: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_docs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm: Option<Norm>,
    terms: Vec<TermEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TermEntry {
    term: String,
    index: usize,
    df: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    idf: Option<f64>,
}

/// Mean of the token vectors; skipped tokens count in neither the sum nor
/// the denominator. No contributing token gives the zero vector.
pub fn bowv(tokens: &TokenSequence, table: &EmbeddingTable, policy: OovPolicy) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in tokens.iter() {
        if let Some(v) = lookup(table, t, policy) {
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

pub fn bowv_matrix(
    seqs: &[TokenSequence],
    table: &EmbeddingTable,
    policy: OovPolicy,
    provenance: &str,
) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = seqs.iter().map(|s| bowv(s, table, policy)).collect();
    FeatureMatrix::dense(DenseMatrix::from_rows(table.dim(), &rows), provenance)
}
