use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// True-class counts (row sums).
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predicted-class counts (column sums).
    pub fn predicted(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.k()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!("label outside 0..{k}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let support = cm.support();
    let predicted = cm.predicted();
    (0..cm.k())
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let p = if predicted[c] == 0 { 0.0 } else { tp / predicted[c] as f64 };
            let r = if support[c] == 0 { 0.0 } else { tp / support[c] as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            ClassMetrics {
                precision: p,
                recall: r,
                f1: f,
                support: support[c],
            }
        })
        .collect()
}

/// Support-weighted precision, recall and F1.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<MetricsTriple> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut out = MetricsTriple::default();
    for m in per_class(cm) {
        let w = m.support as f64 / n as f64;
        out.precision += w * m.precision;
        out.recall += w * m.recall;
        out.f1 += w * m.f1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 0]]);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert!(confusion(&[0], &[], 3).is_err());
    }

    #[test]
    fn weighted_examples() {
        let perfect = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(
            weighted_prf(&perfect).unwrap(),
            MetricsTriple { precision: 1.0, recall: 1.0, f1: 1.0 }
        );
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 1], vec![1, 2]],
        };
        let m = weighted_prf(&cm).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        let cm = confusion(&[0, 0, 1], &[0, 0, 0], 2).unwrap();
        let pc = per_class(&cm);
        assert_eq!((pc[1].precision, pc[1].recall, pc[1].f1), (0.0, 0.0, 0.0));
        let m = weighted_prf(&cm).unwrap();
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!(weighted_prf(&ConfusionMatrix::zeros(3)).is_err());
    }
}
