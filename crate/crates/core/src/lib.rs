//! Hate-speech tweet classification experiments.
//!
//! The crate bundles everything needed to compare classical and neural
//! tweet classifiers under stratified cross-validation:
//!
//! * [`corpus`]: labeled tweet loading, tokenization and fold planning.
//! * [`embeddings`]: word-vector tables and the cosine neighbor probe.
//! * [`features`]: character n-gram, TF-IDF and averaged-embedding features.
//! * [`neural`]: CNN, LSTM and FastText-style classifiers trained by backprop,
//!   with task-specific embedding extraction and gradient checking.
//! * [`classifiers`]: logistic regression, class-balanced linear SVM and
//!   multiclass gradient boosted trees.
//! * [`evaluation`]: weighted metrics, experiment specs and the CV runner.

pub mod classifiers;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod evaluation;
pub mod features;
pub mod neural;
pub(crate) mod util;

pub use error::{Error, Result};
pub use util::sha256_hex;
