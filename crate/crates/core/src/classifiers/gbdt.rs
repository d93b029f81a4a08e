//! Multiclass gradient boosting on softmax log-loss.
//!
//! Each round fits one least-squares regression tree per class to the
//! residuals `onehot(y) - softmax(F)` and adds `learning_rate` times its
//! output to that class's score. Splits are exact: every distinct feature
//! value is a candidate threshold. Sparse columns keep their zeros implicit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::features::{FeatureMatrix, Row, Storage};
use crate::util::{argmax, softmax_in_place};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Sparse inputs wider than this are refused; `None` lifts the cap.
    pub max_sparse_width: Option<usize>,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_rounds: 100,
            max_depth: 6,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            max_sparse_width: Some(20_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: Row<'_>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if value_at(row, feature) <= threshold { left } else { right };
                }
            }
        }
    }
}

fn value_at(row: Row<'_>, feature: usize) -> f64 {
    match row {
        Row::Dense(x) => x[feature],
        Row::Sparse(idx, val) => match idx.binary_search(&(feature as u32)) {
            Ok(p) => val[p],
            Err(_) => 0.0,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_classes: usize,
    pub n_features: usize,
    /// Initial scores: log class priors.
    pub base_score: Vec<f64>,
    pub learning_rate: f64,
    /// `trees[round][class]`
    pub trees: Vec<Vec<Tree>>,
    /// Mean training log-loss before round 1 and after every round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn raw_scores(&self, row: Row<'_>) -> Vec<f64> {
        let mut f = self.base_score.clone();
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                f[k] += self.learning_rate * tree.predict(row);
            }
        }
        f
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_width(x)?;
        Ok((0..x.n_rows())
            .map(|i| {
                let mut f = self.raw_scores(x.row(i));
                softmax_in_place(&mut f);
                f
            })
            .collect())
    }

    pub fn predict_labels(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        self.check_width(x)?;
        Ok((0..x.n_rows()).map(|i| argmax(&self.raw_scores(x.row(i)))).collect())
    }

    fn check_width(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }
}

/// Per-feature values sorted ascending, as `(value, row)`. For sparse
/// columns only nonzeros are listed.
struct Columns {
    cols: Vec<Vec<(f64, u32)>>,
    implicit_zeros: bool,
}

impl Columns {
    fn build(x: &FeatureMatrix) -> Self {
        let nf = x.n_cols();
        let mut cols: Vec<Vec<(f64, u32)>> = vec![Vec::new(); nf];
        match &x.storage {
            Storage::Dense(m) => {
                for c in cols.iter_mut() {
                    c.reserve(m.n_rows);
                }
                for i in 0..m.n_rows {
                    for (f, &v) in m.row(i).iter().enumerate() {
                        cols[f].push((v, i as u32));
                    }
                }
            }
            Storage::Sparse(m) => {
                for i in 0..m.n_rows() {
                    let (idx, val) = m.row(i);
                    for (&f, &v) in idx.iter().zip(val) {
                        if v != 0.0 {
                            cols[f as usize].push((v, i as u32));
                        }
                    }
                }
            }
        }
        cols.par_iter_mut()
            .for_each(|c| c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))));
        Columns {
            cols,
            implicit_zeros: x.is_sparse(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Running left-side statistics of one node while scanning a column.
#[derive(Clone, Copy, Default)]
struct Scan {
    sum: f64,
    count: usize,
    last: f64,
}

struct NodeStats {
    sum: f64,
    count: usize,
}

/// Gains within rounding noise count as ties, which keep the earlier
/// candidate. Sparse and dense scans sum residuals in different orders.
fn improves(gain: f64, incumbent: f64) -> bool {
    gain > incumbent + 1e-9 * incumbent.abs().max(1e-12)
}

fn split_gain(left_sum: f64, left_n: usize, total_sum: f64, total_n: usize) -> f64 {
    let right_sum = total_sum - left_sum;
    let right_n = total_n - left_n;
    left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64
        - total_sum * total_sum / total_n as f64
}

fn threshold_between(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid < b { mid } else { a }
}

/// Best split of every active node on one column.
#[allow(clippy::too_many_arguments)]
fn scan_column(
    feature: usize,
    col: &[(f64, u32)],
    implicit_zeros: bool,
    node_of: &[u32],
    slot_of: &[usize],
    stats: &[NodeStats],
    residual: &[f64],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let n_active = stats.len();
    let mut best: Vec<Option<Candidate>> = vec![None; n_active];
    let mut scan = vec![Scan::default(); n_active];

    let offer = |slot: usize, s: &Scan, next_value: f64, best: &mut Vec<Option<Candidate>>| {
        let st = &stats[slot];
        if s.count >= min_leaf && st.count - s.count >= min_leaf && next_value > s.last {
            let gain = split_gain(s.sum, s.count, st.sum, st.count);
            if best[slot].is_none_or(|b| improves(gain, b.gain)) {
                best[slot] = Some(Candidate {
                    gain,
                    feature,
                    threshold: threshold_between(s.last, next_value),
                });
            }
        }
    };

    let add = |value: f64, row: u32, scan: &mut Vec<Scan>, best: &mut Vec<Option<Candidate>>| {
        let node = node_of[row as usize];
        if node == u32::MAX {
            return;
        }
        let slot = slot_of[node as usize];
        if slot == usize::MAX {
            return;
        }
        let s = scan[slot];
        if s.count > 0 {
            offer(slot, &s, value, best);
        }
        let s = &mut scan[slot];
        s.sum += residual[row as usize];
        s.count += 1;
        s.last = value;
    };

    if !implicit_zeros {
        for &(v, r) in col {
            add(v, r, &mut scan, &mut best);
        }
        return best;
    }

    // Nonzero totals per node, to size the implicit zero block.
    let mut nz_sum = vec![0.0; n_active];
    let mut nz_count = vec![0usize; n_active];
    for &(_, r) in col {
        let node = node_of[r as usize];
        if node == u32::MAX || slot_of[node as usize] == usize::MAX {
            continue;
        }
        let slot = slot_of[node as usize];
        nz_sum[slot] += residual[r as usize];
        nz_count[slot] += 1;
    }
    let split_at = col.partition_point(|e| e.0 < 0.0);
    for &(v, r) in &col[..split_at] {
        add(v, r, &mut scan, &mut best);
    }
    for slot in 0..n_active {
        let zeros = stats[slot].count - nz_count[slot];
        if zeros == 0 {
            continue;
        }
        let s = scan[slot];
        if s.count > 0 {
            offer(slot, &s, 0.0, &mut best);
        }
        let s = &mut scan[slot];
        s.sum += stats[slot].sum - nz_sum[slot];
        s.count += zeros;
        s.last = 0.0;
    }
    for &(v, r) in &col[split_at..] {
        add(v, r, &mut scan, &mut best);
    }
    best
}

/// Least-squares regression tree on `residual`, grown level by level.
/// Returns the tree and each row's leaf value.
fn fit_tree(
    x: &FeatureMatrix,
    columns: &Columns,
    residual: &[f64],
    params: &GbdtParams,
) -> (Tree, Vec<f64>) {
    let n = residual.len();
    let min_leaf = params.min_samples_leaf.max(1);
    let mut node_of = vec![0u32; n];
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut active: Vec<usize> = vec![0];
    let mut depth = 0;
    loop {
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &node) in active.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut stats: Vec<NodeStats> = active.iter().map(|_| NodeStats { sum: 0.0, count: 0 }).collect();
        for (r, &node) in node_of.iter().enumerate() {
            if node != u32::MAX && slot_of[node as usize] != usize::MAX {
                let st = &mut stats[slot_of[node as usize]];
                st.sum += residual[r];
                st.count += 1;
            }
        }
        if depth >= params.max_depth || active.is_empty() {
            for (s, &node) in active.iter().enumerate() {
                let st = &stats[s];
                nodes[node] = Node::Leaf {
                    value: if st.count > 0 { st.sum / st.count as f64 } else { 0.0 },
                };
            }
            break;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = columns
            .cols
            .par_iter()
            .enumerate()
            .map(|(f, col)| {
                scan_column(f, col, columns.implicit_zeros, &node_of, &slot_of, &stats, residual, min_leaf)
            })
            .collect();
        let mut chosen: Vec<Option<Candidate>> = vec![None; active.len()];
        for cands in &per_feature {
            for (slot, c) in cands.iter().enumerate() {
                if let Some(c) = c {
                    if c.gain > 1e-12 && chosen[slot].is_none_or(|b| improves(c.gain, b.gain)) {
                        chosen[slot] = Some(*c);
                    }
                }
            }
        }
        let mut next_active = Vec::new();
        let mut children = vec![(0usize, 0usize); active.len()];
        for (slot, &node) in active.iter().enumerate() {
            match chosen[slot] {
                Some(c) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    children[slot] = (left, right);
                    next_active.push(left);
                    next_active.push(right);
                }
                None => {
                    let st = &stats[slot];
                    nodes[node] = Node::Leaf {
                        value: if st.count > 0 { st.sum / st.count as f64 } else { 0.0 },
                    };
                }
            }
        }
        for (r, node) in node_of.iter_mut().enumerate() {
            if *node == u32::MAX {
                continue;
            }
            let slot = slot_of[*node as usize];
            if slot == usize::MAX {
                continue;
            }
            match chosen[slot] {
                Some(c) => {
                    let (l, rt) = children[slot];
                    let go_left = value_at(x.row(r), c.feature) <= c.threshold;
                    *node = if go_left { l as u32 } else { rt as u32 };
                }
                None => *node = u32::MAX,
            }
        }
        active = next_active;
        depth += 1;
    }
    let tree = Tree { nodes };
    let outputs = (0..n).map(|r| tree.predict(x.row(r))).collect();
    (tree, outputs)
}

fn mean_log_loss(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(f, &c)| {
            let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - f[c]
        })
        .sum::<f64>()
        / y.len() as f64
}

/// Lower bound on initial scores of classes absent from training.
const MIN_LOG_PRIOR: f64 = -30.0;

pub fn train_gbdt(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    params: &GbdtParams,
    _seed: u64,
) -> Result<GbdtModel> {
    check_rows(x, y, n_classes)?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if x.is_sparse() {
        if let Some(cap) = params.max_sparse_width {
            if x.n_cols() > cap {
                return Err(Error::InvalidArgument(format!(
                    "sparse input has {} columns, above the GBDT cap of {cap}",
                    x.n_cols()
                )));
            }
        }
    }
    if let Some((row, column)) = x.find_non_finite() {
        return Err(Error::NonFiniteFeature { row, column });
    }
    let n = y.len();
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let base_score: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                MIN_LOG_PRIOR
            } else {
                (c as f64 / n as f64).ln()
            }
        })
        .collect();
    let mut scores: Vec<Vec<f64>> = vec![base_score.clone(); n];
    let mut train_loss = vec![mean_log_loss(&scores, y)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let columns = if params.n_rounds > 0 { Some(Columns::build(x)) } else { None };
    for _ in 0..params.n_rounds {
        let probs: Vec<Vec<f64>> = scores
            .iter()
            .map(|f| {
                let mut p = f.clone();
                softmax_in_place(&mut p);
                p
            })
            .collect();
        let columns = columns.as_ref().expect("built when rounds > 0");
        let fitted: Vec<(Tree, Vec<f64>)> = (0..n_classes)
            .into_par_iter()
            .map(|k| {
                let residual: Vec<f64> = probs
                    .iter()
                    .zip(y)
                    .map(|(p, &c)| f64::from(u8::from(c == k)) - p[k])
                    .collect();
                fit_tree(x, columns, &residual, params)
            })
            .collect();
        let mut round = Vec::with_capacity(n_classes);
        for (k, (tree, out)) in fitted.into_iter().enumerate() {
            for (f, o) in scores.iter_mut().zip(&out) {
                f[k] += params.learning_rate * o;
            }
            round.push(tree);
        }
        trees.push(round);
        train_loss.push(mean_log_loss(&scores, y));
    }
    Ok(GbdtModel {
        n_classes,
        n_features: x.n_cols(),
        base_score,
        learning_rate: params.learning_rate,
        trees,
        train_loss,
    })
}
