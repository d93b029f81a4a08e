//! Classical learners over [`FeatureMatrix`] inputs: multinomial logistic
//! regression, class-weighted linear SVM and multiclass gradient boosted
//! trees.
//!
//! Labels are class indices in `0..n_classes`; prediction ties go to the
//! lowest index.

mod gbdt;
mod linear;

use serde::{Deserialize, Serialize};

pub use gbdt::{train_gbdt, GbdtModel, GbdtParams, Node, Tree};
pub use linear::{train_linear, LinearLoss, LinearModel, LinearParams};

use crate::features::FeatureMatrix;
use crate::{Error, Result};

/// Per-class loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights(vec![1.0; n_classes])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// `w_c = N / (K * n_c)`.
pub fn balanced_weights(class_counts: &[usize]) -> Result<ClassWeights> {
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has zero examples")));
    }
    let n: usize = class_counts.iter().sum();
    let k = class_counts.len() as f64;
    Ok(ClassWeights(
        class_counts
            .iter()
            .map(|&c| n as f64 / (k * c as f64))
            .collect(),
    ))
}

/// Balanced weights over the classes that occur; absent classes get 1.
pub fn balanced_weights_present(class_counts: &[usize]) -> ClassWeights {
    let present: Vec<usize> = class_counts.iter().copied().filter(|&c| c > 0).collect();
    let weights = balanced_weights(&present).map(|w| w.0).unwrap_or_default();
    let mut it = weights.into_iter();
    ClassWeights(
        class_counts
            .iter()
            .map(|&c| if c > 0 { it.next().unwrap() } else { 1.0 })
            .collect(),
    )
}

pub(crate) fn check_rows(x: &FeatureMatrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Shape(format!("{} feature rows but {} labels", x.n_rows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{n_classes}")));
    }
    Ok(())
}

pub const MODEL_SCHEMA: &str = "hatebench.classifier.v1";

/// Any trained downstream classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Linear(LinearModel),
    Gbdt(GbdtModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    n_features: usize,
    n_classes: usize,
    classes: Vec<String>,
    model: Classifier,
}

impl Classifier {
    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Linear(m) => m.n_features,
            Classifier::Gbdt(m) => m.n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Classifier::Linear(m) => m.n_classes,
            Classifier::Gbdt(m) => m.n_classes,
        }
    }

    pub fn predict_labels(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        match self {
            Classifier::Linear(m) => m.predict_labels(x),
            Classifier::Gbdt(m) => m.predict_labels(x),
        }
    }

    /// Versioned JSON with feature width and class order.
    pub fn to_json(&self, class_names: &[&str]) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            schema: MODEL_SCHEMA.into(),
            n_features: self.n_features(),
            n_classes: self.n_classes(),
            classes: class_names.iter().map(|s| s.to_string()).collect(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<(Self, Vec<String>)> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.schema != MODEL_SCHEMA {
            return Err(Error::Config(format!("unsupported model schema `{}`", file.schema)));
        }
        if file.model.n_features() != file.n_features || file.model.n_classes() != file.n_classes {
            return Err(Error::Config("model metadata disagrees with parameters".into()));
        }
        Ok((file.model, file.classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_weight_examples() {
        assert_eq!(balanced_weights(&[10, 10]).unwrap().0, vec![1.0, 1.0]);
        let w = balanced_weights(&[30, 10]).unwrap().0;
        assert!((w[0] - 40.0 / 60.0).abs() < 1e-15);
        assert_eq!(w[1], 2.0);
        let counts = [1972, 3383, 10589];
        let w = balanced_weights(&counts).unwrap().0;
        let n = 15944.0;
        for (wi, &c) in w.iter().zip(&counts) {
            assert_eq!(*wi, n / (3.0 * c as f64));
        }
        assert!(balanced_weights(&[3, 0]).is_err());
        assert_eq!(balanced_weights_present(&[0, 5, 15]).0, vec![1.0, 2.0, 20.0 / 30.0]);
    }
}
