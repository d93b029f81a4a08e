//! Run configuration: a TOML document, optionally patched with
//! `--set section.key=value` flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use hatebench::corpus::DataFormat;
use hatebench::evaluation::{ExperimentSpec, MethodId, Protocol};
use hatebench::{sha256_hex, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HATEBENCH_OUT";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub embeddings: Option<EmbeddingsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunSection,
    /// Overrides applied to every spec before its own.
    #[serde(default)]
    pub defaults: Map<String, Value>,
    pub specs: Vec<SpecEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// `csv`, `tsv` or `jsonl`; inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub path: PathBuf,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    hatebench::embeddings::DEFAULT_DIM
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `$HATEBENCH_OUT`, then `./runs`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    None,
    #[default]
    FirstFold,
    All,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub verbosity: String,
    pub checkpoints: CheckpointPolicy,
    /// Specs run concurrently.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            protocol: Protocol::Strict,
            k: 10,
            seed: 1,
            verbosity: "info".into(),
            checkpoints: CheckpointPolicy::FirstFold,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub method: String,
    #[serde(default)]
    pub overrides: Map<String, Value>,
}

/// Reads `path`, applies `sets`, and resolves relative paths against the
/// config file's directory.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text, sets).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.dataset.path);
    if let Some(e) = cfg.embeddings.as_mut() {
        resolve(&mut e.path);
    }
    if let Some(d) = cfg.output.dir.as_mut() {
        resolve(d);
    }
    Ok(cfg)
}

pub fn parse_config(text: &str, sets: &[String]) -> std::result::Result<RunConfig, String> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| e.to_string())
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one and as a bare string otherwise. Numeric segments index arrays.
pub fn apply_set(doc: &mut toml::Table, assignment: &str) -> std::result::Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set expects key=value, got `{assignment}`"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("bad key `{key}`"));
    }
    let mut slot = doc
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    for part in &parts[1..] {
        slot = match slot {
            toml::Value::Table(t) => t
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| format!("`{key}`: `{part}` is not an array index"))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| format!("`{key}`: index {i} out of range ({len} entries)"))?
            }
            _ => return Err(format!("`{key}`: `{part}` goes through a scalar")),
        };
    }
    *slot = value;
    Ok(())
}

impl RunConfig {
    pub fn data_format(&self) -> std::result::Result<DataFormat, String> {
        match self.dataset.format.as_deref() {
            Some("csv") => Ok(DataFormat::Csv),
            Some("tsv") => Ok(DataFormat::Tsv),
            Some("jsonl") => Ok(DataFormat::Jsonl),
            Some(other) => Err(format!("dataset.format `{other}` is not one of csv, tsv, jsonl")),
            None => DataFormat::from_path(&self.dataset.path).ok_or_else(|| {
                format!(
                    "cannot infer the format of {}; set dataset.format",
                    self.dataset.path.display()
                )
            }),
        }
    }

    /// Specs in config order, or every problem found.
    pub fn build_specs(&self) -> std::result::Result<Vec<ExperimentSpec>, Vec<String>> {
        let mut errors = Vec::new();
        let mut specs = Vec::new();
        let mut seen = BTreeSet::new();
        let defaults = Value::Object(self.defaults.clone());
        for (i, entry) in self.specs.iter().enumerate() {
            let method: MethodId = match entry.method.parse() {
                Ok(m) => m,
                Err(e) => {
                    errors.push(format!("specs[{i}]: {e}"));
                    continue;
                }
            };
            let mut spec = ExperimentSpec::new(method);
            spec.k = self.run.k;
            spec.seed = self.run.seed;
            spec.protocol = self.run.protocol;
            let built = spec
                .with_overrides(&defaults)
                .and_then(|s| s.with_overrides(&Value::Object(entry.overrides.clone())))
                .and_then(|s| s.validate().map(|_| s));
            match built {
                Ok(s) => {
                    if !seen.insert(s.hash()) {
                        errors.push(format!("specs[{i}]: duplicate of an earlier spec ({method})"));
                    } else {
                        specs.push(s);
                    }
                }
                Err(e) => errors.push(format!("specs[{i}]: {e}")),
            }
        }
        if self.specs.is_empty() {
            errors.push("no specs listed".into());
        }
        if self.run.jobs == 0 {
            errors.push("run.jobs must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(specs)
        } else {
            Err(errors)
        }
    }

    /// Digest of everything that affects results except the spec list.
    /// Output location, verbosity, checkpointing and concurrency are left
    /// out, and adding specs keeps the same run directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().unwrap();
        obj.remove("output");
        obj.remove("specs");
        let run = obj.get_mut("run").and_then(Value::as_object_mut).unwrap();
        for key in ["verbosity", "jobs", "checkpoints"] {
            run.remove(key);
        }
        sha256_hex(serde_json::to_string(&v).unwrap().as_bytes())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[dataset]
path = "tweets.csv"

[run]
k = 5

[[specs]]
method = "TFIDF_SVM"

[[specs]]
method = "CNN_RAND"
overrides = { neural = { epochs = 2 } }
"#;

    #[test]
    fn parses_and_builds_specs() {
        let cfg = parse_config(BASIC, &[]).unwrap();
        let specs = cfg.build_specs().unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].k, 5);
        assert_eq!(specs[1].neural.epochs, 2);
        assert_eq!(cfg.data_format().unwrap(), DataFormat::Csv);
    }

    #[test]
    fn set_flags_override_scalars() {
        let sets = vec![
            "run.seed=42".to_string(),
            "specs.1.overrides.neural.epochs=7".to_string(),
            "defaults.gbdt.n_rounds=3".to_string(),
            "dataset.format=tsv".to_string(),
        ];
        let cfg = parse_config(BASIC, &sets).unwrap();
        assert_eq!(cfg.run.seed, 42);
        let specs = cfg.build_specs().unwrap();
        assert_eq!(specs[1].neural.epochs, 7);
        assert_eq!(specs[0].gbdt.n_rounds, 3);
        assert_eq!(cfg.data_format().unwrap(), DataFormat::Tsv);
        assert!(parse_config(BASIC, &["specs.9.method=X".into()]).is_err());
        assert!(parse_config(BASIC, &["run.k".into()]).is_err());
    }

    #[test]
    fn unknown_keys_and_methods_are_reported() {
        assert!(parse_config(&format!("{BASIC}\n[extra]\nx = 1\n"), &[]).is_err());
        assert!(parse_config(BASIC, &["run.kk=3".into()]).is_err());
        let cfg = parse_config(BASIC, &["specs.0.method=CNN_WORD2VEC".into()]).unwrap();
        let errs = cfg.build_specs().unwrap_err();
        assert!(errs[0].contains("CNN_WORD2VEC") && errs[0].contains("LSTM_RAND_GBDT"), "{errs:?}");
        let cfg = parse_config(BASIC, &["specs.1.overrides.neural.epoch=3".into()]).unwrap();
        assert!(cfg.build_specs().is_err());
    }

    #[test]
    fn hash_ignores_presentation_settings() {
        let a = parse_config(BASIC, &[]).unwrap();
        let b = parse_config(BASIC, &["run.verbosity=debug".into(), "run.jobs=4".into(), "output.dir=x".into()]).unwrap();
        let c = parse_config(BASIC, &["run.seed=2".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
