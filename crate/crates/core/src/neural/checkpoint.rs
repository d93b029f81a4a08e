//! Model checkpoints: a directory holding `meta.json`, `params.bin`
//! (little-endian `f64` arrays, concatenated in the order listed in the
//! metadata) and `train_log.jsonl`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network};
use super::params::Params;
use super::vocab::Vocab;
use super::{EpochLog, InitKind, TrainHyper, TrainedNeuralModel};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "hatebench.neural_checkpoint.v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset in `f64` elements from the start of `params.bin`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    schema: String,
    architecture: Architecture,
    hyper: TrainHyper,
    init: InitKind,
    truncated: usize,
    byte_order: String,
    tensors: Vec<TensorEntry>,
    vocab: Vocab,
}

impl TrainedNeuralModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = &self.network.params;
        let mut tensors = Vec::with_capacity(p.dense.len() + 1);
        let mut bytes = Vec::with_capacity(p.count() * 8);
        let mut offset = 0;
        let all = std::iter::once(("embedding", &p.emb)).chain(p.names.iter().copied().zip(&p.dense));
        for (name, t) in all {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                offset,
            });
            for x in t.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            offset += t.len();
        }
        let meta = Meta {
            schema: CHECKPOINT_SCHEMA.into(),
            architecture: self.network.arch.clone(),
            hyper: self.hyper.clone(),
            init: self.init,
            truncated: self.truncated,
            byte_order: "little".into(),
            tensors,
            vocab: self.vocab.clone(),
        };
        let write = |name: &str, data: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, data).map_err(|e| Error::io(path, e))
        };
        write("meta.json", serde_json::to_string_pretty(&meta)?.as_bytes())?;
        write("params.bin", &bytes)?;
        write("train_log.jsonl", self.log_jsonl().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: Meta = serde_json::from_str(
            &fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        if meta.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Config(format!("unsupported checkpoint schema `{}`", meta.schema)));
        }
        let bin_path = dir.join("params.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for t in &meta.tensors {
            let start = t.offset * 8;
            let end = start + t.rows * t.cols * 8;
            let chunk = bytes
                .get(start..end)
                .ok_or_else(|| Error::Config(format!("params.bin too short for tensor `{}`", t.name)))?;
            let values: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Array2::from_shape_vec((t.rows, t.cols), values).expect("shape matches length"));
        }
        if tensors.is_empty() {
            return Err(Error::Config("checkpoint holds no tensors".into()));
        }
        let emb = tensors.remove(0);
        if emb.nrows() != meta.vocab.len() {
            return Err(Error::Config("embedding rows do not match vocabulary".into()));
        }
        let names = expected_names(&meta.architecture);
        if names.len() != tensors.len() {
            return Err(Error::Config("tensor count does not match architecture".into()));
        }
        let log_path = dir.join("train_log.jsonl");
        let log = match fs::read_to_string(&log_path) {
            Ok(s) => s
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<EpochLog>)
                .collect::<std::result::Result<Vec<_>, _>>()?,
            Err(_) => Vec::new(),
        };
        Ok(TrainedNeuralModel {
            network: Network {
                arch: meta.architecture,
                params: Params {
                    emb,
                    dense: tensors,
                    names,
                },
            },
            vocab: meta.vocab,
            hyper: meta.hyper,
            init: meta.init,
            log,
            truncated: meta.truncated,
        })
    }
}

fn expected_names(arch: &Architecture) -> Vec<&'static str> {
    match arch {
        Architecture::FastText(_) => vec!["out_w", "out_b"],
        Architecture::Cnn(c) => {
            let mut v: Vec<&'static str> = Vec::new();
            for _ in &c.filter_widths {
                v.push("conv_w");
                v.push("conv_b");
            }
            v.push("out_w");
            v.push("out_b");
            v
        }
        Architecture::Lstm(_) => vec!["lstm_wx", "lstm_wh", "lstm_b", "out_w", "out_b"],
    }
}
