//! Central-difference verification of the analytic gradients.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network};
use super::vocab::Vocab;
use super::{dropout_mask, EmbeddingInit};
use crate::corpus::{Label, TokenSequence};
use crate::{Error, Result};

/// Denominator floor for the relative error. Central differences carry
/// absolute noise near 1e-11, which would swamp gradients below 1e-6.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Total parameters to compare.
    pub samples: usize,
    /// How many of those come from embedding rows used by the batch.
    pub embedding_samples: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Multiplier applied to the analytic gradient before comparing; values
    /// other than 1 inject a known fault.
    pub analytic_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples: 200,
            embedding_samples: 40,
            max_len: 6,
            seed: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// max |g_a - g_n| / max(|g_a|, |g_n|, 1e-8) over the checked parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    pub embedding_checked: usize,
    /// Name of the tensor holding the worst parameter.
    pub worst: String,
}

/// Mean cross-entropy over the batch with fixed dropout masks.
fn batch_loss(net: &Network, examples: &[(Vec<usize>, usize)], masks: &[Option<Vec<f64>>]) -> f64 {
    examples
        .iter()
        .zip(masks)
        .map(|((ids, y), m)| net.loss(ids, *y, m.as_deref()))
        .sum::<f64>()
        / examples.len() as f64
}

/// Checks a freshly initialized network on a small tokenized batch
/// (at most 8 examples).
pub fn gradient_check(
    arch: &Architecture,
    init: &EmbeddingInit,
    batch: &[(TokenSequence, Label)],
    dim: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let seqs: Vec<TokenSequence> = batch.iter().map(|(s, _)| s.clone()).collect();
    let vocab = Vocab::build(&seqs);
    let emb = init.matrix(&vocab, dim, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut net = Network::new(arch.clone(), emb, &mut rng);
    let examples: Vec<(Vec<usize>, usize)> = batch
        .iter()
        .map(|(s, l)| (vocab.encode(s, opts.max_len), l.index()))
        .collect();
    gradient_check_network(&mut net, &examples, opts)
}

/// Compares analytic and central-difference gradients of the mean batch
/// loss on sampled parameters of `net`. Parameters are restored afterwards.
pub fn gradient_check_network(
    net: &mut Network,
    examples: &[(Vec<usize>, usize)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if examples.is_empty() || examples.len() > 8 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs 1..=8 examples, got {}",
            examples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let width = net.arch.dropout_width();
    let rate = net.arch.dropout_rate();
    let masks: Vec<Option<Vec<f64>>> = examples
        .iter()
        .map(|_| dropout_mask(width, rate, &mut rng))
        .collect();

    let mut grads = net.params.zero_grads();
    let scale = 1.0 / examples.len() as f64;
    for ((ids, y), m) in examples.iter().zip(&masks) {
        net.accumulate_grad(ids, *y, m.as_deref(), scale, &mut grads);
    }

    let emb_shape = net.params.emb.dim();
    let emb_len = emb_shape.0 * emb_shape.1;
    let total = net.params.count();
    let rows: Vec<usize> = examples
        .iter()
        .flat_map(|(ids, _)| ids.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut chosen = BTreeSet::new();
    if !rows.is_empty() {
        let wanted = opts.embedding_samples.min(rows.len() * emb_shape.1);
        while chosen.len() < wanted {
            let r = rows[rng.gen_range(0..rows.len())];
            chosen.insert(r * emb_shape.1 + rng.gen_range(0..emb_shape.1));
        }
    }
    let embedding_checked = chosen.len();
    let wanted = opts.samples.min(total - emb_len + embedding_checked);
    while chosen.len() < wanted {
        chosen.insert(emb_len + rng.gen_range(0..total - emb_len));
    }

    let eps = opts.epsilon;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for &i in &chosen {
        let analytic = grads.flat(i, emb_shape) * opts.analytic_scale;
        let original = *net.params.flat_mut(i);
        *net.params.flat_mut(i) = original + eps;
        let plus = batch_loss(net, examples, &masks);
        *net.params.flat_mut(i) = original - eps;
        let minus = batch_loss(net, examples, &masks);
        *net.params.flat_mut(i) = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss perturbing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = tensor_name(net, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked: chosen.len(),
        embedding_checked,
        worst,
    })
}

fn tensor_name(net: &Network, mut i: usize) -> String {
    if i < net.params.emb.len() {
        return "embedding".into();
    }
    i -= net.params.emb.len();
    for (t, name) in net.params.dense.iter().zip(&net.params.names) {
        if i < t.len() {
            return (*name).to_string();
        }
        i -= t.len();
    }
    "?".into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{CnnSpec, FastTextSpec, LstmSpec, INIT_SCALE};

    fn batch() -> Vec<(TokenSequence, Label)> {
        let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        (0..6)
            .map(|i| {
                let len = 1 + (i * 3) % 6;
                let s = (0..len).map(|j| words[(i + 2 * j) % words.len()]).collect();
                (s, Label::ALL[i % 3])
            })
            .collect()
    }

    fn check(arch: Architecture, scale: f64) -> GradCheckReport {
        let opts = GradCheckOptions {
            analytic_scale: scale,
            ..Default::default()
        };
        let init = EmbeddingInit::Random { scale: INIT_SCALE, seed: 2 };
        gradient_check(&arch, &init, &batch(), 8, &opts).unwrap()
    }

    #[test]
    fn fasttext_gradients_agree() {
        let r = check(Architecture::FastText(FastTextSpec {}), 1.0);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        assert!(r.embedding_checked >= 20);
    }

    #[test]
    fn cnn_and_lstm_gradients_agree() {
        let cnn = CnnSpec { filter_widths: vec![2, 3], feature_maps: 8, dropout: 0.5 };
        let r = check(Architecture::Cnn(cnn), 1.0);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let r = check(Architecture::Lstm(LstmSpec { hidden: 8, dropout: 0.5 }), 1.0);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = check(Architecture::FastText(FastTextSpec {}), 1.01);
        assert!(r.max_rel_error > 5e-3, "{r:?}");
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let big: Vec<_> = batch().into_iter().cycle().take(9).collect();
        let init = EmbeddingInit::Random { scale: INIT_SCALE, seed: 2 };
        let arch = Architecture::FastText(FastTextSpec {});
        assert!(gradient_check(&arch, &init, &big, 4, &GradCheckOptions::default()).is_err());
    }
}
