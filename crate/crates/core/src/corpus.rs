//! Labeled tweet corpora: loading, tokenization and stratified fold plans.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;
use crate::{Error, Result};

/// Tweet class. The integer encoding (`RACIST=0, SEXIST=1, NONE=2`) is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Racist = 0,
    Sexist = 1,
    None = 2,
}

pub const NUM_CLASSES: usize = 3;

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Racist, Label::Sexist, Label::None];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Racist => "racist",
            Label::Sexist => "sexist",
            Label::None => "none",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_lowercase().as_str() {
            "racist" | "racism" => Ok(Label::Racist),
            "sexist" | "sexism" => Ok(Label::Sexist),
            "none" => Ok(Label::None),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// Ordered, validated collection of tweets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    records: Vec<TweetRecord>,
    class_counts: [usize; NUM_CLASSES],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl DataFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<DataFormat> {
        match path.extension()?.to_str()?.to_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "tsv" | "tab" => Some(DataFormat::Tsv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "tsv" => Ok(DataFormat::Tsv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown data format `{other}`"))),
        }
    }
}

impl Dataset {
    /// Builds a dataset, rejecting empty texts and duplicate ids.
    pub fn new(records: Vec<TweetRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_counts = [0; NUM_CLASSES];
        for (i, r) in records.iter().enumerate() {
            if r.text.is_empty() {
                return Err(Error::BadRow {
                    row: i + 1,
                    message: "empty text".into(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId {
                    row: i + 1,
                    id: r.id.clone(),
                });
            }
            class_counts[r.label.index()] += 1;
        }
        Ok(Dataset {
            records,
            class_counts,
        })
    }

    pub fn records(&self) -> &[TweetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.class_counts[label.index()]
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        Label::ALL
            .iter()
            .map(|&l| (l, self.class_counts[l.index()]))
            .collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// New dataset holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records: Vec<_> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut class_counts = [0; NUM_CLASSES];
        for r in &records {
            class_counts[r.label.index()] += 1;
        }
        Dataset {
            records,
            class_counts,
        }
    }

    /// Canonical JSON-lines serialization (`id`, `text`, `label` per line).
    pub fn to_canonical_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Content digest of the canonical serialization.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_canonical_jsonl().as_bytes())
    }

    pub fn write(&self, path: &Path, format: DataFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file, format)
            .map_err(|e| match e {
                Error::Csv(c) if c.is_io_error() => Error::io(path, std::io::Error::other(c)),
                other => other,
            })
    }

    pub fn write_to<W: Write>(&self, mut w: W, format: DataFormat) -> Result<()> {
        match format {
            DataFormat::Jsonl => {
                w.write_all(self.to_canonical_jsonl().as_bytes())
                    .map_err(|e| Error::io("<writer>", e))?;
            }
            DataFormat::Csv | DataFormat::Tsv => {
                let delim = if format == DataFormat::Csv { b',' } else { b'\t' };
                let mut wtr = csv::WriterBuilder::new().delimiter(delim).from_writer(w);
                wtr.write_record(["id", "text", "label"])?;
                for r in &self.records {
                    wtr.write_record([r.id.as_str(), r.text.as_str(), r.label.name()])?;
                }
                wtr.flush().map_err(|e| Error::io("<writer>", e))?;
            }
        }
        Ok(())
    }
}

/// Loads a labeled tweet file with columns/keys `id`, `text`, `label`.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), format)
}

pub fn read_dataset<R: Read>(reader: R, format: DataFormat) -> Result<Dataset> {
    let records = match format {
        DataFormat::Csv => read_delimited(reader, b',')?,
        DataFormat::Tsv => read_delimited(reader, b'\t')?,
        DataFormat::Jsonl => read_jsonl(BufReader::new(reader))?,
    };
    Dataset::new(records)
}

fn read_delimited<R: Read>(reader: R, delimiter: u8) -> Result<Vec<TweetRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let (id_col, text_col, label_col) = (column("id")?, column("text")?, column("label")?);

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let label_str = field(label_col);
        let label = label_str.parse().map_err(|_| Error::UnknownLabel {
            row: line,
            value: label_str.to_string(),
        })?;
        let text = field(text_col);
        if text.is_empty() {
            return Err(Error::BadRow {
                row: line,
                message: "empty text".into(),
            });
        }
        records.push(TweetRecord {
            id: field(id_col).to_string(),
            text: text.to_string(),
            label,
        });
        lines.push(line);
    }
    check_duplicates(&records, |i| lines[i])?;
    Ok(records)
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TweetRecord>> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        let get = |key: &str| {
            obj.get(key).ok_or_else(|| Error::MissingColumn {
                column: key.to_string(),
            })
        };
        let id = match get("id")? {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => {
                return Err(Error::BadRow {
                    row: line_no,
                    message: "`id` must be a string or number".into(),
                })
            }
        };
        let text = get("text")?.as_str().unwrap_or("").to_string();
        if text.is_empty() {
            return Err(Error::BadRow {
                row: line_no,
                message: "empty or non-string text".into(),
            });
        }
        let label_value = get("label")?;
        let label_str = label_value.as_str().unwrap_or("");
        let label = label_str.parse().map_err(|_| Error::UnknownLabel {
            row: line_no,
            value: label_value.to_string(),
        })?;
        records.push(TweetRecord { id, text, label });
        lines.push(line_no);
    }
    check_duplicates(&records, |i| lines[i])?;
    Ok(records)
}

fn check_duplicates(records: &[TweetRecord], row_of: impl Fn(usize) -> usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId {
                row: row_of(i),
                id: r.id.clone(),
            });
        }
    }
    Ok(())
}

/// Reserved token standing in for texts that clean down to nothing.
pub const EMPTY_TOKEN: &str = "<empty>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerPolicy {
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_mentions: bool,
    /// `#foo` becomes `foo`; when off, hashtags are dropped entirely.
    pub keep_hashtag_word: bool,
}

impl Default for TokenizerPolicy {
    fn default() -> Self {
        TokenizerPolicy {
            lowercase: true,
            strip_urls: true,
            strip_mentions: true,
            keep_hashtag_word: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().map(Into::into).collect())
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#\w+").unwrap())
}

/// Splits a tweet into tokens under `policy`.
pub fn tokenize(text: &str, policy: &TokenizerPolicy) -> TokenSequence {
    let mut s = text.to_string();
    if policy.strip_urls {
        s = url_re().replace_all(&s, " ").into_owned();
    }
    if policy.strip_mentions {
        s = mention_re().replace_all(&s, " ").into_owned();
    }
    if !policy.keep_hashtag_word {
        s = hashtag_re().replace_all(&s, " ").into_owned();
    }
    if policy.lowercase {
        s = s.to_lowercase();
    }
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Like [`tokenize`], but texts with no surviving token map to [`EMPTY_TOKEN`].
pub fn tokenize_nonempty(text: &str, policy: &TokenizerPolicy) -> TokenSequence {
    let seq = tokenize(text, policy);
    if seq.is_empty() {
        TokenSequence(vec![EMPTY_TOKEN.to_string()])
    } else {
        seq
    }
}

/// Tokenizes every record of `dataset`.
pub fn tokenize_dataset(dataset: &Dataset, policy: &TokenizerPolicy) -> Vec<TokenSequence> {
    dataset
        .records()
        .iter()
        .map(|r| tokenize_nonempty(&r.text, policy))
        .collect()
}

/// Assignment of every record to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Stratified `k`-fold plan.
///
/// Each class is shuffled independently and dealt round-robin, continuing
/// from where the previous class stopped, so every (class, fold) count is
/// within one of `n_class / k` and fold sizes stay balanced.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    for label in Label::ALL {
        let count = dataset.class_count(label);
        if count > 0 && count < k {
            return Err(Error::Stratification {
                class: label.name().to_string(),
                count,
                k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; dataset.len()];
    let mut next_fold = 0;
    for label in Label::ALL {
        let mut members: Vec<usize> = dataset
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for idx in members {
            assignments[idx] = next_fold;
            next_fold = (next_fold + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: Label) -> TweetRecord {
        TweetRecord {
            id: id.into(),
            text: format!("text {id}"),
            label,
        }
    }

    #[test]
    fn label_parsing_is_case_insensitive() {
        assert_eq!("RACIST".parse::<Label>(), Ok(Label::Racist));
        assert_eq!("Sexist".parse::<Label>(), Ok(Label::Sexist));
        assert_eq!("none".parse::<Label>(), Ok(Label::None));
        assert_eq!(" Racism".parse::<Label>(), Ok(Label::Racist));
        assert!("neither".parse::<Label>().is_err());
        assert_eq!(Label::Racist.index(), 0);
        assert_eq!(Label::Sexist.index(), 1);
        assert_eq!(Label::None.index(), 2);
    }

    #[test]
    fn three_row_csv() {
        let csv = "id,text,label\n1,hello there,racist\n2,\"quoted, text\",Sexist\n3,meh,none\n";
        let ds = read_dataset(csv.as_bytes(), DataFormat::Csv).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records()[1].text, "quoted, text");
        for l in Label::ALL {
            assert_eq!(ds.class_count(l), 1);
        }
    }

    #[test]
    fn header_only_file_is_empty_dataset() {
        let ds = read_dataset("id,text,label\n".as_bytes(), DataFormat::Csv).unwrap();
        assert!(ds.is_empty());
        assert!(ds.class_counts().values().all(|&c| c == 0));
    }

    #[test]
    fn missing_column_is_named() {
        let err = read_dataset("id,text\n1,hi\n".as_bytes(), DataFormat::Csv).unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "label"),
            other => panic!("unexpected {other:?}"),
        }
        let err = read_dataset("{\"id\":1,\"label\":\"none\"}\n".as_bytes(), DataFormat::Jsonl)
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { column } if column == "text"));
    }

    #[test]
    fn unknown_label_cites_row() {
        let csv = "id,text,label\n1,a,none\n2,b,offensive\n";
        match read_dataset(csv.as_bytes(), DataFormat::Csv).unwrap_err() {
            Error::UnknownLabel { row, value } => {
                assert_eq!(row, 3);
                assert_eq!(value, "offensive");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let tsv = "id\ttext\tlabel\n1\ta\tnone\n1\tb\tnone\n";
        assert!(matches!(
            read_dataset(tsv.as_bytes(), DataFormat::Tsv),
            Err(Error::DuplicateId { .. })
        ));
    }

    #[test]
    fn jsonl_accepts_numeric_ids() {
        let src = "{\"id\": 572341498827522049, \"text\": \"hi\", \"label\": \"Racist\"}\n\n";
        let ds = read_dataset(src.as_bytes(), DataFormat::Jsonl).unwrap();
        assert_eq!(ds.records()[0].id, "572341498827522049");
        assert_eq!(ds.records()[0].label, Label::Racist);
    }

    #[test]
    fn tokenize_examples() {
        let p = TokenizerPolicy::default();
        assert!(tokenize("", &p).is_empty());
        assert_eq!(tokenize("I love NLP!", &p).0, vec!["i", "love", "nlp"]);
        assert_eq!(
            tokenize("@user check https://t.co/x #Sexist lol", &p).0,
            vec!["check", "sexist", "lol"]
        );
        let no_tags = TokenizerPolicy {
            keep_hashtag_word: false,
            ..p.clone()
        };
        assert_eq!(tokenize("#MKR is on", &no_tags).0, vec!["is", "on"]);
        assert_eq!(tokenize_nonempty("@a http://x", &p).0, vec![EMPTY_TOKEN]);
    }

    #[test]
    fn folds_exact_stratification() {
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(rec(&format!("a{i}"), Label::Racist));
        }
        for i in 0..4 {
            records.push(rec(&format!("b{i}"), Label::Sexist));
        }
        let ds = Dataset::new(records).unwrap();
        for seed in 0..20 {
            let plan = make_folds(&ds, 2, seed).unwrap();
            for f in 0..2 {
                let test = plan.test_indices(f);
                let a = test.iter().filter(|&&i| ds.records()[i].label == Label::Racist).count();
                let b = test.len() - a;
                assert_eq!((a, b), (3, 2));
            }
        }
    }

    #[test]
    fn folds_reject_bad_k() {
        let ds = Dataset::new(vec![rec("1", Label::None), rec("2", Label::None)]).unwrap();
        assert!(matches!(make_folds(&ds, 1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            make_folds(&ds, 3, 0),
            Err(Error::Stratification { class, .. }) if class == "none"
        ));
        assert_eq!(make_folds(&ds, 2, 9).unwrap(), make_folds(&ds, 2, 9).unwrap());
    }
}
