//! CNN, LSTM and FastText-style tweet classifiers trained by backprop.
//!
//! Every model learns its own embedding layer; after training the layer is
//! available as a task-specific [`EmbeddingTable`] via
//! [`TrainedNeuralModel::extract_embeddings`].

mod checkpoint;
mod gradcheck;
mod network;
mod optim;
mod params;
mod vocab;

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_check, gradient_check_network, GradCheckOptions, GradCheckReport};
pub use network::{cross_entropy, Architecture, CnnSpec, FastTextSpec, LstmSpec, Network};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{Grads, Params};
pub use vocab::{encode_batch, EncodedBatch, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use crate::corpus::{Label, TokenSequence, NUM_CLASSES};
use crate::embeddings::{random_vector, EmbeddingTable, OovPolicy, Provenance};
use crate::features::bowv;
use crate::util::argmax;
use crate::{Error, Result};

/// Scale of uniform random embedding initialization.
pub const INIT_SCALE: f64 = 0.25;

/// How the embedding layer starts out. Embeddings are always trainable.
#[derive(Clone, Copy, Debug)]
pub enum EmbeddingInit<'a> {
    Random { scale: f64, seed: u64 },
    /// Copy rows from a table; words it lacks get a fixed random vector.
    Pretrained(&'a EmbeddingTable),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Pretrained,
}

impl EmbeddingInit<'_> {
    pub fn kind(&self) -> InitKind {
        match self {
            EmbeddingInit::Random { .. } => InitKind::Random,
            EmbeddingInit::Pretrained(_) => InitKind::Pretrained,
        }
    }

    /// Embedding matrix for `vocab`. PAD and UNK rows are left at zero.
    pub fn matrix(&self, vocab: &Vocab, dim: usize, seed: u64) -> Result<Array2<f64>> {
        let mut emb = Array2::zeros((vocab.len(), dim));
        match *self {
            EmbeddingInit::Random { scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for r in 2..vocab.len() {
                    for c in 0..dim {
                        emb[[r, c]] = rng.gen_range(-scale..=scale);
                    }
                }
            }
            EmbeddingInit::Pretrained(table) => {
                if table.dim() != dim {
                    return Err(Error::Config(format!(
                        "pretrained table has dimension {}, model expects {dim}",
                        table.dim()
                    )));
                }
                for (r, word) in vocab.words().iter().enumerate().skip(2) {
                    let row: Vec<f64> = match table.get(word) {
                        Some(v) => v.iter().map(|&x| f64::from(x)).collect(),
                        None => random_vector(word, dim, INIT_SCALE, seed),
                    };
                    emb.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
                }
            }
        }
        Ok(emb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl TrainHyper {
    /// Adam with batches of 128 for CNN and LSTM; RMSProp with batches of
    /// 64 for FastText.
    pub fn for_architecture(arch: &Architecture) -> Self {
        let (optimizer, batch_size) = match arch {
            Architecture::FastText(_) => (OptimizerConfig::rmsprop(), 64),
            _ => (OptimizerConfig::adam(), 128),
        };
        TrainHyper {
            optimizer,
            batch_size,
            epochs: 10,
            max_len: 30,
            embedding_dim: crate::embeddings::DEFAULT_DIM,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Excluded from equality-sensitive outputs; see [`TrainedNeuralModel::log_jsonl`].
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedNeuralModel {
    pub network: Network,
    pub vocab: Vocab,
    pub hyper: TrainHyper,
    pub init: InitKind,
    pub log: Vec<EpochLog>,
    /// Training sequences longer than `max_len`.
    pub truncated: usize,
}

/// Examples per gradient chunk; chunks are evaluated in parallel and summed
/// in a fixed order so results do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Trains `arch` on tokenized examples with softmax cross-entropy.
pub fn train_neural(
    arch: &Architecture,
    init: &EmbeddingInit,
    seqs: &[TokenSequence],
    labels: &[Label],
    hyper: &TrainHyper,
) -> Result<TrainedNeuralModel> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if seqs.len() != labels.len() {
        return Err(Error::Shape(format!("{} sequences but {} labels", seqs.len(), labels.len())));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let vocab = Vocab::build(seqs);
    let emb = init.matrix(&vocab, hyper.embedding_dim, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut network = Network::new(arch.clone(), emb, &mut rng);
    let encoded: Vec<Vec<usize>> = seqs.iter().map(|s| vocab.encode(s, hyper.max_len)).collect();
    let truncated = seqs.iter().filter(|s| s.len() > hyper.max_len).count();
    if truncated > 0 {
        log::info!("{truncated} training sequences truncated to {} tokens", hyper.max_len);
    }
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();

    let mut optimizer = Optimizer::new(hyper.optimizer, &network.params);
    let width = arch.dropout_width();
    let rate = arch.dropout_rate();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let masks: Vec<Option<Vec<f64>>> = batch
                .iter()
                .map(|_| dropout_mask(width, rate, &mut rng))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let net = &network;
            let parts: Vec<(Grads, f64, usize)> = batch
                .par_chunks(GRAD_CHUNK)
                .zip(masks.par_chunks(GRAD_CHUNK))
                .map(|(idx, mk)| {
                    let mut g = net.params.zero_grads();
                    let mut loss = 0.0;
                    let mut hits = 0;
                    for (&i, m) in idx.iter().zip(mk) {
                        let (l, logits) =
                            net.accumulate_grad(&encoded[i], targets[i], m.as_deref(), scale, &mut g);
                        loss += l;
                        hits += usize::from(argmax(&logits) == targets[i]);
                    }
                    (g, loss, hits)
                })
                .collect();
            let mut iter = parts.into_iter();
            let (mut grads, mut batch_loss, mut hits) = iter.next().expect("non-empty batch");
            for (g, l, h) in iter {
                grads.add(&g);
                batch_loss += l;
                hits += h;
            }
            if !batch_loss.is_finite() {
                let norms: Vec<String> = network
                    .params
                    .norms()
                    .into_iter()
                    .map(|(n, v)| format!("{n}={v:.4e}"))
                    .collect();
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {b}; parameter norms: {}",
                    norms.join(", ")
                )));
            }
            optimizer.step(&mut network.params, &grads);
            loss_sum += batch_loss;
            correct += hits;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / seqs.len() as f64,
            accuracy: correct as f64 / seqs.len() as f64,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "{} epoch {}: loss {:.4} acc {:.4}",
            arch.name(),
            entry.epoch,
            entry.loss,
            entry.accuracy
        );
        log.push(entry);
    }
    if !network.params.is_finite() {
        return Err(Error::Diverged("non-finite parameters after training".into()));
    }
    Ok(TrainedNeuralModel {
        network,
        vocab,
        hyper: hyper.clone(),
        init: init.kind(),
        log,
        truncated,
    })
}

/// Inverted-dropout multipliers: each unit kept with probability `1 - rate`
/// and scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng>(width: usize, rate: f64, rng: &mut R) -> Option<Vec<f64>> {
    if width == 0 || rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..width)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

impl TrainedNeuralModel {
    pub fn name(&self) -> &'static str {
        self.network.arch.name()
    }

    /// Class probabilities for one tweet (dropout off).
    pub fn predict_proba(&self, tokens: &TokenSequence) -> [f64; NUM_CLASSES] {
        self.network
            .predict_proba(&self.vocab.encode(tokens, self.hyper.max_len))
    }

    pub fn predict(&self, tokens: &TokenSequence) -> Label {
        Label::from_index(argmax(&self.predict_proba(tokens))).expect("class index")
    }

    /// The embedding layer keyed by the training vocabulary, without the
    /// PAD and UNK rows.
    pub fn extract_embeddings(&self) -> EmbeddingTable {
        let emb = &self.network.params.emb;
        let rows = self
            .vocab
            .words()
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), emb.row(i).to_vec()));
        EmbeddingTable::from_rows(
            emb.ncols(),
            Provenance::Learned(self.name().to_string()),
            rows,
        )
        .expect("learned parameters are finite")
    }

    /// Training log as JSON lines (`epoch`, `loss`, `accuracy`, `wall_time_secs`).
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("log serializes"));
            out.push('\n');
        }
        out
    }
}

/// Average of the table rows of the tweet's tokens; unknown tokens are skipped.
pub fn tweet_embedding(table: &EmbeddingTable, tokens: &TokenSequence) -> Vec<f64> {
    bowv(tokens, table, OovPolicy::Skip)
}
