use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsTriple;
use crate::classifiers::{GbdtParams, LinearParams};
use crate::corpus::TokenizerPolicy;
use crate::embeddings::{OovPolicy, DEFAULT_DIM};
use crate::neural::{
    Architecture, CnnSpec, FastTextSpec, LstmSpec, OptimizerConfig, TrainHyper, INIT_SCALE,
};
use crate::util::sha256_hex;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MethodId {
    CharNgramLr,
    TfidfSvm,
    TfidfGbdt,
    BowvSvm,
    BowvGbdt,
    CnnRand,
    CnnGlove,
    FasttextRand,
    FasttextGlove,
    LstmRand,
    LstmGlove,
    CnnGloveGbdt,
    CnnRandGbdt,
    FasttextGloveGbdt,
    FasttextRandGbdt,
    LstmGloveGbdt,
    LstmRandGbdt,
    /// Learned embeddings of all three networks, concatenated, fed to GBDT.
    ConcatRandGbdt,
    ConcatGloveGbdt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    A,
    B,
    C,
    /// Not a table row.
    Extra,
}

impl Part {
    pub fn title(self) -> &'static str {
        match self {
            Part::A => "Part A: Baselines",
            Part::B => "Part B: DNNs Only",
            Part::C => "Part C: DNNs + GBDT Classifier",
            Part::Extra => "Extra: Combined embeddings",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetKind {
    Cnn,
    Lstm,
    FastText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Random,
    Glove,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    CharNgram,
    Tfidf,
    Bowv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Learner {
    LogReg,
    BalancedSvm,
    Gbdt,
}

/// The pipeline graph a method id stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Classic(FeatureKind, Learner),
    Neural(NetKind, Init),
    /// Mean of learned word vectors, classified by GBDT.
    Stacked(NetKind, Init),
    Concat(Init),
}

impl MethodId {
    /// Table order, then the extras.
    pub const ALL: [MethodId; 19] = [
        MethodId::CharNgramLr,
        MethodId::TfidfSvm,
        MethodId::TfidfGbdt,
        MethodId::BowvSvm,
        MethodId::BowvGbdt,
        MethodId::CnnRand,
        MethodId::CnnGlove,
        MethodId::FasttextRand,
        MethodId::FasttextGlove,
        MethodId::LstmRand,
        MethodId::LstmGlove,
        MethodId::CnnGloveGbdt,
        MethodId::CnnRandGbdt,
        MethodId::FasttextGloveGbdt,
        MethodId::FasttextRandGbdt,
        MethodId::LstmGloveGbdt,
        MethodId::LstmRandGbdt,
        MethodId::ConcatRandGbdt,
        MethodId::ConcatGloveGbdt,
    ];

    /// The seventeen table rows.
    pub fn table_rows() -> &'static [MethodId] {
        &Self::ALL[..17]
    }

    pub fn position(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::CharNgramLr => "CHAR_NGRAM_LR",
            MethodId::TfidfSvm => "TFIDF_SVM",
            MethodId::TfidfGbdt => "TFIDF_GBDT",
            MethodId::BowvSvm => "BOWV_SVM",
            MethodId::BowvGbdt => "BOWV_GBDT",
            MethodId::CnnRand => "CNN_RAND",
            MethodId::CnnGlove => "CNN_GLOVE",
            MethodId::FasttextRand => "FASTTEXT_RAND",
            MethodId::FasttextGlove => "FASTTEXT_GLOVE",
            MethodId::LstmRand => "LSTM_RAND",
            MethodId::LstmGlove => "LSTM_GLOVE",
            MethodId::CnnGloveGbdt => "CNN_GLOVE_GBDT",
            MethodId::CnnRandGbdt => "CNN_RAND_GBDT",
            MethodId::FasttextGloveGbdt => "FASTTEXT_GLOVE_GBDT",
            MethodId::FasttextRandGbdt => "FASTTEXT_RAND_GBDT",
            MethodId::LstmGloveGbdt => "LSTM_GLOVE_GBDT",
            MethodId::LstmRandGbdt => "LSTM_RAND_GBDT",
            MethodId::ConcatRandGbdt => "CONCAT_RAND_GBDT",
            MethodId::ConcatGloveGbdt => "CONCAT_GLOVE_GBDT",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MethodId::CharNgramLr => "Char n-gram+Logistic Regression",
            MethodId::TfidfSvm => "TF-IDF+Balanced SVM",
            MethodId::TfidfGbdt => "TF-IDF+GBDT",
            MethodId::BowvSvm => "BoWV+Balanced SVM",
            MethodId::BowvGbdt => "BoWV+GBDT",
            MethodId::CnnRand => "CNN+Random Embedding",
            MethodId::CnnGlove => "CNN+GloVe",
            MethodId::FasttextRand => "FastText+Random Embedding",
            MethodId::FasttextGlove => "FastText+GloVe",
            MethodId::LstmRand => "LSTM+Random Embedding",
            MethodId::LstmGlove => "LSTM+GloVe",
            MethodId::CnnGloveGbdt => "CNN+GloVe+GBDT",
            MethodId::CnnRandGbdt => "CNN+Random Embedding+GBDT",
            MethodId::FasttextGloveGbdt => "FastText+GloVe+GBDT",
            MethodId::FasttextRandGbdt => "FastText+Random Embedding+GBDT",
            MethodId::LstmGloveGbdt => "LSTM+GloVe+GBDT",
            MethodId::LstmRandGbdt => "LSTM+Random Embedding+GBDT",
            MethodId::ConcatRandGbdt => "CNN/LSTM/FastText+Random Embedding+GBDT",
            MethodId::ConcatGloveGbdt => "CNN/LSTM/FastText+GloVe+GBDT",
        }
    }

    pub fn part(self) -> Part {
        match self.position() {
            0..=4 => Part::A,
            5..=10 => Part::B,
            11..=16 => Part::C,
            _ => Part::Extra,
        }
    }

    pub fn pipeline(self) -> Pipeline {
        use FeatureKind::*;
        use Init::*;
        use Learner::*;
        use NetKind::*;
        match self {
            MethodId::CharNgramLr => Pipeline::Classic(CharNgram, LogReg),
            MethodId::TfidfSvm => Pipeline::Classic(Tfidf, BalancedSvm),
            MethodId::TfidfGbdt => Pipeline::Classic(Tfidf, Gbdt),
            MethodId::BowvSvm => Pipeline::Classic(Bowv, BalancedSvm),
            MethodId::BowvGbdt => Pipeline::Classic(Bowv, Gbdt),
            MethodId::CnnRand => Pipeline::Neural(Cnn, Random),
            MethodId::CnnGlove => Pipeline::Neural(Cnn, Glove),
            MethodId::FasttextRand => Pipeline::Neural(FastText, Random),
            MethodId::FasttextGlove => Pipeline::Neural(FastText, Glove),
            MethodId::LstmRand => Pipeline::Neural(Lstm, Random),
            MethodId::LstmGlove => Pipeline::Neural(Lstm, Glove),
            MethodId::CnnGloveGbdt => Pipeline::Stacked(Cnn, Glove),
            MethodId::CnnRandGbdt => Pipeline::Stacked(Cnn, Random),
            MethodId::FasttextGloveGbdt => Pipeline::Stacked(FastText, Glove),
            MethodId::FasttextRandGbdt => Pipeline::Stacked(FastText, Random),
            MethodId::LstmGloveGbdt => Pipeline::Stacked(Lstm, Glove),
            MethodId::LstmRandGbdt => Pipeline::Stacked(Lstm, Random),
            MethodId::ConcatRandGbdt => Pipeline::Concat(Random),
            MethodId::ConcatGloveGbdt => Pipeline::Concat(Glove),
        }
    }

    pub fn needs_pretrained(self) -> bool {
        match self.pipeline() {
            Pipeline::Classic(f, _) => f == FeatureKind::Bowv,
            Pipeline::Neural(_, i) | Pipeline::Stacked(_, i) | Pipeline::Concat(i) => i == Init::Glove,
        }
    }

    /// Whether the method trains a network whose embeddings feed a second stage.
    pub fn learns_embeddings(self) -> bool {
        matches!(self.pipeline(), Pipeline::Stacked(..) | Pipeline::Concat(_))
    }

    /// Published (precision, recall, F1) for the table rows.
    pub fn reference(self) -> Option<MetricsTriple> {
        let (p, r, f) = match self {
            MethodId::CharNgramLr => (0.729, 0.778, 0.753),
            MethodId::TfidfSvm => (0.816, 0.816, 0.816),
            MethodId::TfidfGbdt => (0.819, 0.807, 0.813),
            MethodId::BowvSvm => (0.791, 0.788, 0.789),
            MethodId::BowvGbdt => (0.800, 0.802, 0.801),
            MethodId::CnnRand => (0.813, 0.816, 0.814),
            MethodId::CnnGlove => (0.839, 0.840, 0.839),
            MethodId::FasttextRand => (0.824, 0.827, 0.825),
            MethodId::FasttextGlove => (0.828, 0.831, 0.829),
            MethodId::LstmRand => (0.805, 0.804, 0.804),
            MethodId::LstmGlove => (0.807, 0.809, 0.808),
            MethodId::CnnGloveGbdt => (0.864, 0.864, 0.864),
            MethodId::CnnRandGbdt => (0.864, 0.864, 0.864),
            MethodId::FasttextGloveGbdt => (0.853, 0.854, 0.853),
            MethodId::FasttextRandGbdt => (0.886, 0.887, 0.886),
            MethodId::LstmGloveGbdt => (0.849, 0.848, 0.848),
            MethodId::LstmRandGbdt => (0.930, 0.930, 0.930),
            MethodId::ConcatRandGbdt | MethodId::ConcatGloveGbdt => return None,
        };
        Some(MetricsTriple { precision: p, recall: r, f1: f })
    }

    /// The Part B method with the same network and initialization.
    pub fn dnn_counterpart(self) -> Option<MethodId> {
        let Pipeline::Stacked(net, init) = self.pipeline() else {
            return None;
        };
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.pipeline() == Pipeline::Neural(net, init))
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = MethodId::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method id `{s}`; valid ids: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    /// Every fitted component sees only the training folds.
    #[default]
    Strict,
    /// Embedding learners are trained once on the whole dataset before the
    /// fold loop; downstream classifiers stay per fold.
    PaperFaithful,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Strict => "STRICT",
            Protocol::PaperFaithful => "PAPER_FAITHFUL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharNgramParams {
    pub n_min: usize,
    pub n_max: usize,
    pub min_doc_freq: usize,
}

impl Default for CharNgramParams {
    fn default() -> Self {
        CharNgramParams {
            n_min: 1,
            n_max: 4,
            min_doc_freq: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralParams {
    pub epochs: usize,
    pub max_len: usize,
    pub embedding_dim: usize,
    /// Defaults to 128 for CNN and LSTM, 64 for FastText.
    pub batch_size: Option<usize>,
    /// Overrides the optimizer's default step size.
    pub learning_rate: Option<f64>,
    pub init_scale: f64,
    pub cnn: CnnSpec,
    pub lstm: LstmSpec,
}

impl Default for NeuralParams {
    fn default() -> Self {
        NeuralParams {
            epochs: 10,
            max_len: 30,
            embedding_dim: DEFAULT_DIM,
            batch_size: None,
            learning_rate: None,
            init_scale: INIT_SCALE,
            cnn: CnnSpec::default(),
            lstm: LstmSpec::default(),
        }
    }
}

impl NeuralParams {
    pub fn architecture(&self, net: NetKind) -> Architecture {
        match net {
            NetKind::Cnn => Architecture::Cnn(self.cnn.clone()),
            NetKind::Lstm => Architecture::Lstm(self.lstm.clone()),
            NetKind::FastText => Architecture::FastText(FastTextSpec {}),
        }
    }

    pub fn hyper(&self, arch: &Architecture, seed: u64) -> TrainHyper {
        let mut h = TrainHyper::for_architecture(arch);
        h.epochs = self.epochs;
        h.max_len = self.max_len;
        h.embedding_dim = self.embedding_dim;
        h.seed = seed;
        if let Some(b) = self.batch_size {
            h.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            match &mut h.optimizer {
                OptimizerConfig::Adam { lr: l, .. } | OptimizerConfig::RmsProp { lr: l, .. } => *l = lr,
            }
        }
        h
    }
}

/// Everything that determines one table row's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub method: MethodId,
    pub k: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub tokenizer: TokenizerPolicy,
    pub char_ngram: CharNgramParams,
    pub linear: LinearParams,
    pub gbdt: GbdtParams,
    /// Applied to BoWV averaging.
    pub bowv_oov: OovPolicy,
    pub neural: NeuralParams,
}

impl ExperimentSpec {
    pub fn new(method: MethodId) -> Self {
        let mut gbdt = GbdtParams::default();
        if method == MethodId::TfidfGbdt {
            // The sparse splitter never touches implicit zeros, so the full
            // TF-IDF vocabulary is affordable.
            gbdt.max_sparse_width = None;
        }
        ExperimentSpec {
            method,
            k: 10,
            seed: 1,
            protocol: Protocol::Strict,
            tokenizer: TokenizerPolicy::default(),
            char_ngram: CharNgramParams::default(),
            linear: LinearParams::default(),
            gbdt,
            bowv_oov: OovPolicy::Skip,
            neural: NeuralParams::default(),
        }
    }

    /// Applies a JSON object of overrides on top of this spec. Unknown keys
    /// are rejected.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", self.method)))
    }

    pub fn canonical_json(&self) -> String {
        // serde_json maps keep keys sorted, so a round trip through Value
        // gives one spelling per spec.
        let v = serde_json::to_value(self).expect("spec serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("{}: k must be at least 2", self.method)));
        }
        let n = &self.neural;
        if n.embedding_dim == 0 || n.max_len == 0 {
            return Err(Error::Config(format!(
                "{}: embedding_dim and max_len must be positive",
                self.method
            )));
        }
        if n.batch_size == Some(0) {
            return Err(Error::Config(format!("{}: batch_size must be positive", self.method)));
        }
        let c = &self.char_ngram;
        if c.n_min == 0 || c.n_min > c.n_max {
            return Err(Error::Config(format!("{}: need 1 <= n_min <= n_max", self.method)));
        }
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ids_round_trip_and_order() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert_eq!(MethodId::table_rows().len(), 17);
        let err = "CNN_WORD2VEC".parse::<MethodId>().unwrap_err().to_string();
        assert!(err.contains("CNN_GLOVE"), "{err}");
        assert_eq!(MethodId::LstmRandGbdt.dnn_counterpart(), Some(MethodId::LstmRand));
        assert_eq!(MethodId::BowvGbdt.part(), Part::A);
        assert_eq!(MethodId::FasttextGlove.part(), Part::B);
        assert_eq!(MethodId::CnnGloveGbdt.part(), Part::C);
    }

    #[test]
    fn overrides_merge_and_reject_unknown_keys() {
        let spec = ExperimentSpec::new(MethodId::CnnRand);
        let s = spec
            .with_overrides(&json!({"neural": {"epochs": 3, "cnn": {"feature_maps": 7}}, "seed": 9}))
            .unwrap();
        assert_eq!(s.neural.epochs, 3);
        assert_eq!(s.neural.cnn.feature_maps, 7);
        assert_eq!(s.neural.cnn.filter_widths, vec![3, 4, 5]);
        assert_eq!(s.seed, 9);
        assert_ne!(s.hash(), spec.hash());
        assert!(spec.with_overrides(&json!({"neural": {"epoch": 3}})).is_err());
        assert!(spec.with_overrides(&json!({"bogus": 1})).is_err());
    }

    #[test]
    fn hash_is_stable_across_round_trips() {
        let spec = ExperimentSpec::new(MethodId::TfidfGbdt);
        let back: ExperimentSpec = serde_json::from_str(&spec.canonical_json()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.hash(), spec.hash());
        assert_eq!(spec.gbdt.max_sparse_width, None);
    }

    #[test]
    fn hyper_follows_overrides() {
        let mut n = NeuralParams::default();
        n.learning_rate = Some(0.01);
        n.batch_size = Some(4);
        let h = n.hyper(&n.architecture(NetKind::FastText), 7);
        assert_eq!(h.batch_size, 4);
        assert_eq!(h.optimizer, OptimizerConfig::RmsProp { lr: 0.01, rho: 0.9, eps: 1e-8 });
        let h = NeuralParams::default().hyper(&Architecture::Lstm(LstmSpec::default()), 7);
        assert_eq!((h.batch_size, h.optimizer.name(), h.epochs), (128, "adam", 10));
    }
}
