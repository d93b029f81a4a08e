use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, weighted_prf, ConfusionMatrix, MetricsTriple};
use super::spec::{ExperimentSpec, FeatureKind, Init, Learner, MethodId, NetKind, Part, Pipeline, Protocol};
use crate::classifiers::{
    balanced_weights_present, train_gbdt, train_linear, ClassWeights, LinearLoss,
};
use crate::corpus::{make_folds, tokenize_dataset, Dataset, TokenSequence, NUM_CLASSES};
use crate::embeddings::EmbeddingTable;
use crate::features::{bowv_matrix, fit_char_vocab, fit_tfidf, DenseMatrix, FeatureMatrix};
use crate::neural::{train_neural, tweet_embedding, EmbeddingInit, TrainedNeuralModel};
use crate::util::mix_seed;
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "hatebench.cv_report.v1";

pub const LEAKAGE_WARNING: &str = "PAPER_FAITHFUL: embedding learners were trained on the full dataset, \
held-out folds included; scores are optimistic and not comparable to STRICT rows";

pub const FASTTEXT_NOTE: &str = "FastText averages unigram embeddings only; bigram features are not used";

/// Callbacks for observing a run.
#[derive(Clone, Copy, Default)]
pub struct CvHooks<'a> {
    /// Called with the exact records each fitted component is built from.
    /// `fold` is `None` for fits made before the fold loop.
    pub on_fit: Option<&'a (dyn Fn(Option<usize>, &str, &Dataset) + Sync)>,
    /// Called with every trained network.
    pub on_model: Option<&'a (dyn Fn(Option<usize>, &TrainedNeuralModel) + Sync)>,
}

impl CvHooks<'_> {
    fn fit(&self, fold: Option<usize>, component: &str, data: &Dataset) {
        if let Some(f) = self.on_fit {
            f(fold, component, data);
        }
    }

    fn model(&self, fold: Option<usize>, model: &TrainedNeuralModel) {
        if let Some(f) = self.on_model {
            f(fold, model);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: MetricsTriple,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub schema: String,
    pub method: MethodId,
    pub method_name: String,
    pub part: Part,
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub spec_hash: String,
    pub spec: ExperimentSpec,
    pub dataset_hash: String,
    pub n_examples: usize,
    /// Set by the caller when the run comes from a config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub folds: Vec<FoldResult>,
    pub mean: MetricsTriple,
    /// Sample (n - 1) standard deviation over folds.
    pub std: MetricsTriple,
    pub warnings: Vec<String>,
    /// Kept out of the JSON so identical runs serialize identically.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl CVReport {
    /// Mean and standard deviation recomputed from the fold values.
    pub fn recompute(&self) -> (MetricsTriple, MetricsTriple) {
        summarize(&self.folds.iter().map(|f| f.metrics).collect::<Vec<_>>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: CVReport = serde_json::from_str(s)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Config(format!("unsupported report schema `{}`", r.schema)));
        }
        Ok(r)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn summarize(folds: &[MetricsTriple]) -> (MetricsTriple, MetricsTriple) {
    let (pm, ps) = mean_std(&folds.iter().map(|m| m.precision).collect::<Vec<_>>());
    let (rm, rs) = mean_std(&folds.iter().map(|m| m.recall).collect::<Vec<_>>());
    let (fm, fs) = mean_std(&folds.iter().map(|m| m.f1).collect::<Vec<_>>());
    (
        MetricsTriple { precision: pm, recall: rm, f1: fm },
        MetricsTriple { precision: ps, recall: rs, f1: fs },
    )
}

pub fn run_cv(spec: &ExperimentSpec, dataset: &Dataset, embeddings: Option<&EmbeddingTable>) -> Result<CVReport> {
    run_cv_with(spec, dataset, embeddings, CvHooks::default())
}

pub fn run_cv_with(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    hooks: CvHooks<'_>,
) -> Result<CVReport> {
    let started = Instant::now();
    spec.validate()?;
    let pretrained = match (spec.method.needs_pretrained(), embeddings) {
        (true, None) => {
            return Err(Error::Config(format!(
                "{} needs a pretrained embedding table",
                spec.method
            )))
        }
        (true, Some(t)) if t.dim() != spec.neural.embedding_dim && !matches!(spec.method.pipeline(), Pipeline::Classic(..)) => {
            return Err(Error::Config(format!(
                "{}: embedding table has dimension {}, spec expects {}",
                spec.method,
                t.dim(),
                spec.neural.embedding_dim
            )))
        }
        (true, t) => t,
        (false, _) => None,
    };
    let plan = make_folds(dataset, spec.k, spec.seed)?;
    let seqs = tokenize_dataset(dataset, &spec.tokenizer);
    let mut warnings = Vec::new();
    if matches!(
        spec.method.pipeline(),
        Pipeline::Neural(NetKind::FastText, _) | Pipeline::Stacked(NetKind::FastText, _) | Pipeline::Concat(_)
    ) {
        warnings.push(FASTTEXT_NOTE.to_string());
    }

    let shared = if spec.protocol == Protocol::PaperFaithful && spec.method.learns_embeddings() {
        warnings.push(LEAKAGE_WARNING.to_string());
        hooks.fit(None, "embedding learner", dataset);
        let all: Vec<usize> = (0..dataset.len()).collect();
        let models = learn_embeddings(spec, dataset, &seqs, &all, pretrained, mix_seed(spec.seed, u64::MAX))?;
        for m in &models {
            hooks.model(None, m);
        }
        Some(models.iter().map(|m| m.extract_embeddings()).collect::<Vec<_>>())
    } else {
        None
    };

    let folds: Vec<FoldResult> = (0..spec.k)
        .into_par_iter()
        .map(|fold| {
            let train_idx = plan.train_indices(fold);
            let test_idx = plan.test_indices(fold);
            let ctx = FoldCtx {
                spec,
                fold,
                seed: mix_seed(spec.seed, fold as u64),
                dataset,
                seqs: &seqs,
                pretrained,
                shared: shared.as_deref(),
                hooks,
            };
            let predicted = ctx.fit_predict(&train_idx, &test_idx)?;
            let truth: Vec<usize> = test_idx.iter().map(|&i| dataset.records()[i].label.index()).collect();
            let cm = confusion(&truth, &predicted, NUM_CLASSES)?;
            Ok(FoldResult {
                fold,
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                metrics: weighted_prf(&cm)?,
                confusion: cm,
            })
        })
        .collect::<Result<_>>()?;

    let (mean, std) = summarize(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(CVReport {
        schema: REPORT_SCHEMA.into(),
        method: spec.method,
        method_name: spec.method.display_name().into(),
        part: spec.method.part(),
        protocol: spec.protocol,
        k: spec.k,
        seed: spec.seed,
        spec_hash: spec.hash(),
        spec: spec.clone(),
        dataset_hash: dataset.content_hash(),
        n_examples: dataset.len(),
        config_hash: None,
        folds,
        mean,
        std,
        warnings,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn nets_for(spec: &ExperimentSpec) -> (Vec<NetKind>, Init) {
    match spec.method.pipeline() {
        Pipeline::Neural(n, i) | Pipeline::Stacked(n, i) => (vec![n], i),
        Pipeline::Concat(i) => (vec![NetKind::Cnn, NetKind::Lstm, NetKind::FastText], i),
        Pipeline::Classic(..) => (Vec::new(), Init::Random),
    }
}

/// Trains the network(s) of `spec` on the rows `idx`.
fn learn_embeddings(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    seqs: &[TokenSequence],
    idx: &[usize],
    pretrained: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<Vec<TrainedNeuralModel>> {
    let (nets, init) = nets_for(spec);
    let train_seqs: Vec<TokenSequence> = idx.iter().map(|&i| seqs[i].clone()).collect();
    let labels: Vec<_> = idx.iter().map(|&i| dataset.records()[i].label).collect();
    nets.iter()
        .enumerate()
        .map(|(j, &net)| {
            let seed = mix_seed(seed, j as u64);
            let arch = spec.neural.architecture(net);
            let hyper = spec.neural.hyper(&arch, seed);
            let emb_init = match init {
                Init::Random => EmbeddingInit::Random { scale: spec.neural.init_scale, seed },
                Init::Glove => EmbeddingInit::Pretrained(pretrained.expect("checked before the fold loop")),
            };
            train_neural(&arch, &emb_init, &train_seqs, &labels, &hyper)
        })
        .collect()
}

struct FoldCtx<'a> {
    spec: &'a ExperimentSpec,
    fold: usize,
    seed: u64,
    dataset: &'a Dataset,
    seqs: &'a [TokenSequence],
    pretrained: Option<&'a EmbeddingTable>,
    shared: Option<&'a [EmbeddingTable]>,
    hooks: CvHooks<'a>,
}

impl FoldCtx<'_> {
    fn fit_predict(&self, train_idx: &[usize], test_idx: &[usize]) -> Result<Vec<usize>> {
        let train = self.dataset.subset(train_idx);
        let y: Vec<usize> = train.records().iter().map(|r| r.label.index()).collect();
        let pick = |idx: &[usize]| -> Vec<TokenSequence> { idx.iter().map(|&i| self.seqs[i].clone()).collect() };
        let fold = Some(self.fold);
        if y.windows(2).all(|w| w[0] == w[1]) {
            return Ok(vec![y[0]; test_idx.len()]);
        }
        match self.spec.method.pipeline() {
            Pipeline::Classic(features, learner) => {
                self.hooks.fit(fold, "features", &train);
                let (x_train, x_test) = match features {
                    FeatureKind::CharNgram => {
                        let texts = |idx: &[usize]| -> Vec<&str> {
                            idx.iter().map(|&i| self.dataset.records()[i].text.as_str()).collect()
                        };
                        let c = &self.spec.char_ngram;
                        let vocab = fit_char_vocab(&texts(train_idx), c.n_min, c.n_max, c.min_doc_freq)?;
                        (vocab.transform_many(&texts(train_idx)), vocab.transform_many(&texts(test_idx)))
                    }
                    FeatureKind::Tfidf => {
                        let model = fit_tfidf(&pick(train_idx))?;
                        (model.transform_many(&pick(train_idx)), model.transform_many(&pick(test_idx)))
                    }
                    FeatureKind::Bowv => {
                        let table = self.pretrained.expect("checked before the fold loop");
                        let p = self.spec.bowv_oov;
                        (
                            bowv_matrix(&pick(train_idx), table, p, "bowv"),
                            bowv_matrix(&pick(test_idx), table, p, "bowv"),
                        )
                    }
                };
                self.hooks.fit(fold, "classifier", &train);
                self.classify(learner, &x_train, &y, &x_test)
            }
            Pipeline::Neural(..) => {
                self.hooks.fit(fold, "network", &train);
                let models =
                    learn_embeddings(self.spec, self.dataset, self.seqs, train_idx, self.pretrained, self.seed)?;
                let model = &models[0];
                self.hooks.model(fold, model);
                Ok(pick(test_idx).iter().map(|s| model.predict(s).index()).collect())
            }
            Pipeline::Stacked(..) | Pipeline::Concat(_) => {
                let tables: Vec<EmbeddingTable> = match self.shared {
                    Some(t) => t.to_vec(),
                    None => {
                        self.hooks.fit(fold, "embedding learner", &train);
                        let models = learn_embeddings(
                            self.spec,
                            self.dataset,
                            self.seqs,
                            train_idx,
                            self.pretrained,
                            self.seed,
                        )?;
                        for m in &models {
                            self.hooks.model(fold, m);
                        }
                        models.iter().map(|m| m.extract_embeddings()).collect()
                    }
                };
                let featurize = |idx: &[usize]| {
                    let width: usize = tables.iter().map(|t| t.dim()).sum();
                    let rows: Vec<Vec<f64>> = idx
                        .iter()
                        .map(|&i| tables.iter().flat_map(|t| tweet_embedding(t, &self.seqs[i])).collect())
                        .collect();
                    FeatureMatrix::dense(DenseMatrix::from_rows(width, &rows), "learned tweet embeddings")
                };
                self.hooks.fit(fold, "classifier", &train);
                self.classify(Learner::Gbdt, &featurize(train_idx), &y, &featurize(test_idx))
            }
        }
    }

    fn classify(&self, learner: Learner, x: &FeatureMatrix, y: &[usize], x_test: &FeatureMatrix) -> Result<Vec<usize>> {
        match learner {
            Learner::LogReg => train_linear(
                x,
                y,
                NUM_CLASSES,
                LinearLoss::Logistic,
                &ClassWeights::uniform(NUM_CLASSES),
                &self.spec.linear,
                self.seed,
            )?
            .predict_labels(x_test),
            Learner::BalancedSvm => {
                let mut counts = [0usize; NUM_CLASSES];
                for &c in y {
                    counts[c] += 1;
                }
                train_linear(
                    x,
                    y,
                    NUM_CLASSES,
                    LinearLoss::Hinge,
                    &balanced_weights_present(&counts),
                    &self.spec.linear,
                    self.seed,
                )?
                .predict_labels(x_test)
            }
            Learner::Gbdt => train_gbdt(x, y, NUM_CLASSES, &self.spec.gbdt, self.seed)?.predict_labels(x_test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, TweetRecord};

    fn toy(n: usize) -> Dataset {
        let words = [["hate", "them", "race"], ["women", "kitchen", "girls"], ["nice", "day", "sun"]];
        let records = (0..n)
            .map(|i| {
                let c = i % 3;
                TweetRecord {
                    id: i.to_string(),
                    text: format!("{} {} filler{}", words[c][i % 3], words[c][(i + 1) % 3], i % 7),
                    label: Label::ALL[c],
                }
            })
            .collect();
        Dataset::new(records).unwrap()
    }

    #[test]
    fn mean_std_uses_sample_denominator() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn tfidf_svm_separates_toy_data() {
        let mut spec = ExperimentSpec::new(MethodId::TfidfSvm);
        spec.k = 3;
        let r = run_cv(&spec, &toy(60), None).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert!(r.mean.f1 > 0.95, "{:?}", r.mean);
        let (m, s) = r.recompute();
        assert!((m.f1 - r.mean.f1).abs() < 1e-12 && (s.f1 - r.std.f1).abs() < 1e-12);
        assert!(!r.to_json().unwrap().contains("wall_time"));
    }

    #[test]
    fn missing_pretrained_table_is_a_config_error() {
        let spec = ExperimentSpec::new(MethodId::BowvSvm);
        assert!(matches!(run_cv(&spec, &toy(30), None), Err(Error::Config(_))));
    }

    #[test]
    fn constant_labels_give_perfect_folds() {
        let records = (0..20)
            .map(|i| TweetRecord { id: i.to_string(), text: format!("tweet {i}"), label: Label::Sexist })
            .collect();
        let ds = Dataset::new(records).unwrap();
        for method in [MethodId::CharNgramLr, MethodId::TfidfGbdt, MethodId::FasttextRand] {
            let mut spec = ExperimentSpec::new(method);
            spec.k = 4;
            spec.neural.embedding_dim = 4;
            spec.neural.epochs = 1;
            let r = run_cv(&spec, &ds, None).unwrap();
            assert!(r.folds.iter().all(|f| f.metrics.f1 == 1.0), "{method}");
        }
    }
}
