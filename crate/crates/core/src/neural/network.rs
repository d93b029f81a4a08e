//! Forward and backward passes of the three classifiers.
//!
//! All three share a softmax/cross-entropy head over [`NUM_CLASSES`]
//! outputs. Inputs are the ids of the real (non-PAD) tokens of one example.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};
use super::vocab::{PAD, UNK};
use crate::corpus::NUM_CLASSES;
use crate::util::softmax_in_place;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSpec {
    pub filter_widths: Vec<usize>,
    pub feature_maps: usize,
    pub dropout: f64,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            filter_widths: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmSpec {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for LstmSpec {
    fn default() -> Self {
        LstmSpec {
            hidden: 200,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastTextSpec {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Architecture {
    Cnn(CnnSpec),
    Lstm(LstmSpec),
    FastText(FastTextSpec),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Cnn(_) => "cnn",
            Architecture::Lstm(_) => "lstm",
            Architecture::FastText(_) => "fasttext",
        }
    }

    /// Width of the layer that dropout is applied to (0 = no dropout).
    pub fn dropout_width(&self) -> usize {
        match self {
            Architecture::Cnn(c) => c.filter_widths.len() * c.feature_maps,
            Architecture::Lstm(l) => l.hidden,
            Architecture::FastText(_) => 0,
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match self {
            Architecture::Cnn(c) => c.dropout,
            Architecture::Lstm(l) => l.dropout,
            Architecture::FastText(_) => 0.0,
        }
    }
}

/// Glorot-uniform matrix.
fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

/// A network: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Params,
}

impl Network {
    /// Fresh network around an already initialized embedding matrix.
    /// Rows `PAD` and `UNK` are zeroed.
    pub fn new<R: Rng>(arch: Architecture, mut emb: Array2<f64>, rng: &mut R) -> Self {
        let d = emb.ncols();
        for special in [PAD, UNK] {
            if special < emb.nrows() {
                emb.row_mut(special).fill(0.0);
            }
        }
        let k = NUM_CLASSES;
        let (dense, names) = match &arch {
            Architecture::FastText(_) => (
                vec![glorot(d, k, d, k, rng), Array2::zeros((1, k))],
                vec!["out_w", "out_b"],
            ),
            Architecture::Cnn(c) => {
                let m = c.feature_maps;
                let mut dense = Vec::new();
                let mut names = Vec::new();
                for &w in &c.filter_widths {
                    dense.push(glorot(w * d, m, w * d, m * w, rng));
                    dense.push(Array2::zeros((1, m)));
                    names.push("conv_w");
                    names.push("conv_b");
                }
                let pooled = c.filter_widths.len() * m;
                dense.push(glorot(pooled, k, pooled, k, rng));
                dense.push(Array2::zeros((1, k)));
                names.push("out_w");
                names.push("out_b");
                (dense, names)
            }
            Architecture::Lstm(l) => {
                let h = l.hidden;
                let mut bias = Array2::zeros((1, 4 * h));
                bias.slice_mut(s![0, h..2 * h]).fill(1.0);
                (
                    vec![
                        glorot(d, 4 * h, d, 4 * h, rng),
                        glorot(h, 4 * h, h, 4 * h, rng),
                        bias,
                        glorot(h, k, h, k, rng),
                        Array2::zeros((1, k)),
                    ],
                    vec!["lstm_wx", "lstm_wh", "lstm_b", "out_w", "out_b"],
                )
            }
        };
        Network {
            arch,
            params: Params { emb, dense, names },
        }
    }

    pub fn dim(&self) -> usize {
        self.params.emb.ncols()
    }

    /// Class logits at inference time (no dropout).
    pub fn logits(&self, ids: &[usize]) -> [f64; NUM_CLASSES] {
        match &self.arch {
            Architecture::FastText(_) => fasttext_forward(&self.params, ids).1,
            Architecture::Cnn(c) => cnn_forward(c, &self.params, ids, None).logits,
            Architecture::Lstm(l) => lstm_forward(l, &self.params, ids, None).logits,
        }
    }

    pub fn predict_proba(&self, ids: &[usize]) -> [f64; NUM_CLASSES] {
        let mut p = self.logits(ids);
        softmax_in_place(&mut p);
        p
    }

    /// Cross-entropy loss of one example. `mask` holds dropout multipliers
    /// (0 or 1/(1-rate)) for the dropout layer; `None` disables dropout.
    pub fn loss(&self, ids: &[usize], label: usize, mask: Option<&[f64]>) -> f64 {
        let logits = match &self.arch {
            Architecture::FastText(_) => fasttext_forward(&self.params, ids).1,
            Architecture::Cnn(c) => cnn_forward(c, &self.params, ids, mask).logits,
            Architecture::Lstm(l) => lstm_forward(l, &self.params, ids, mask).logits,
        };
        cross_entropy(&logits, label).0
    }

    /// Adds `scale * d(loss)/d(params)` into `grads`; returns the loss and
    /// the training-mode logits.
    pub fn accumulate_grad(
        &self,
        ids: &[usize],
        label: usize,
        mask: Option<&[f64]>,
        scale: f64,
        grads: &mut Grads,
    ) -> (f64, [f64; NUM_CLASSES]) {
        match &self.arch {
            Architecture::FastText(_) => {
                let (h, logits) = fasttext_forward(&self.params, ids);
                let (loss, dz) = cross_entropy(&logits, label);
                fasttext_backward(&self.params, ids, &h, &dz, scale, grads);
                (loss, logits)
            }
            Architecture::Cnn(c) => {
                let cache = cnn_forward(c, &self.params, ids, mask);
                let (loss, dz) = cross_entropy(&cache.logits, label);
                cnn_backward(c, &self.params, ids, &cache, mask, &dz, scale, grads);
                (loss, cache.logits)
            }
            Architecture::Lstm(l) => {
                let cache = lstm_forward(l, &self.params, ids, mask);
                let (loss, dz) = cross_entropy(&cache.logits, label);
                lstm_backward(l, &self.params, ids, &cache, mask, &dz, scale, grads);
                (loss, cache.logits)
            }
        }
    }
}

/// Loss and d(loss)/d(logits) = softmax(logits) - onehot(label).
pub fn cross_entropy(logits: &[f64; NUM_CLASSES], label: usize) -> (f64, [f64; NUM_CLASSES]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut d = *logits;
    softmax_in_place(&mut d);
    d[label] -= 1.0;
    (lse - logits[label], d)
}

fn head(p: &Params, w_idx: usize, feat: ArrayView1<f64>) -> [f64; NUM_CLASSES] {
    let z = feat.dot(&p.dense[w_idx]) + &p.dense[w_idx + 1].row(0);
    [z[0], z[1], z[2]]
}

/// Backprop through the output layer; returns d(loss)/d(feat).
fn head_backward(
    p: &Params,
    w_idx: usize,
    feat: ArrayView1<f64>,
    dz: &[f64; NUM_CLASSES],
    scale: f64,
    grads: &mut Grads,
) -> Array1<f64> {
    let dz = Array1::from_iter(dz.iter().map(|v| v * scale));
    {
        let gw = &mut grads.dense[w_idx];
        for (i, &f) in feat.iter().enumerate() {
            if f != 0.0 {
                gw.row_mut(i).scaled_add(f, &dz);
            }
        }
    }
    grads.dense[w_idx + 1].row_mut(0).scaled_add(1.0, &dz);
    p.dense[w_idx].dot(&dz)
}

fn fasttext_forward(p: &Params, ids: &[usize]) -> (Array1<f64>, [f64; NUM_CLASSES]) {
    let mut h = Array1::zeros(p.emb.ncols());
    for &id in ids {
        h += &p.emb.row(id);
    }
    if !ids.is_empty() {
        h /= ids.len() as f64;
    }
    let logits = head(p, 0, h.view());
    (h, logits)
}

fn fasttext_backward(
    p: &Params,
    ids: &[usize],
    h: &Array1<f64>,
    dz: &[f64; NUM_CLASSES],
    scale: f64,
    grads: &mut Grads,
) {
    let dh = head_backward(p, 0, h.view(), dz, scale, grads);
    if ids.is_empty() {
        return;
    }
    let inv = 1.0 / ids.len() as f64;
    let d = p.emb.ncols();
    for &id in ids {
        let row = grads.emb_row(id, d);
        for (g, v) in row.iter_mut().zip(dh.iter()) {
            *g += v * inv;
        }
    }
}

struct CnnCache {
    windows: Vec<Array2<f64>>,
    pre_act: Vec<Array2<f64>>,
    argmax: Vec<Vec<usize>>,
    pooled: Array1<f64>,
    dropped: Array1<f64>,
    logits: [f64; NUM_CLASSES],
}

/// Window matrix for width `w`: row `t` is the concatenation of the
/// embeddings at positions `t..t+w`. Sequences shorter than `w` are
/// extended with zero vectors.
fn windows(p: &Params, ids: &[usize], w: usize) -> Array2<f64> {
    let d = p.emb.ncols();
    let len = ids.len().max(w);
    let rows = len - w + 1;
    let mut out = Array2::zeros((rows, w * d));
    for t in 0..rows {
        for k in 0..w {
            if let Some(&id) = ids.get(t + k) {
                out.slice_mut(s![t, k * d..(k + 1) * d]).assign(&p.emb.row(id));
            }
        }
    }
    out
}

fn cnn_forward(spec: &CnnSpec, p: &Params, ids: &[usize], mask: Option<&[f64]>) -> CnnCache {
    let m = spec.feature_maps;
    let nw = spec.filter_widths.len();
    let mut pooled = Array1::zeros(nw * m);
    let mut all_windows = Vec::with_capacity(nw);
    let mut pre_act = Vec::with_capacity(nw);
    let mut argmax = Vec::with_capacity(nw);
    for (wi, &w) in spec.filter_widths.iter().enumerate() {
        let win = windows(p, ids, w);
        let a = win.dot(&p.dense[2 * wi]) + &p.dense[2 * wi + 1].row(0);
        let mut best = vec![0usize; m];
        for j in 0..m {
            let col = a.column(j);
            let mut t_best = 0;
            for t in 1..col.len() {
                if col[t] > col[t_best] {
                    t_best = t;
                }
            }
            best[j] = t_best;
            pooled[wi * m + j] = col[t_best].max(0.0);
        }
        all_windows.push(win);
        pre_act.push(a);
        argmax.push(best);
    }
    let dropped = match mask {
        Some(mk) => &pooled * &ArrayView1::from(mk),
        None => pooled.clone(),
    };
    let logits = head(p, 2 * nw, dropped.view());
    CnnCache {
        windows: all_windows,
        pre_act,
        argmax,
        pooled,
        dropped,
        logits,
    }
}

#[allow(clippy::too_many_arguments)]
fn cnn_backward(
    spec: &CnnSpec,
    p: &Params,
    ids: &[usize],
    cache: &CnnCache,
    mask: Option<&[f64]>,
    dz: &[f64; NUM_CLASSES],
    scale: f64,
    grads: &mut Grads,
) {
    let m = spec.feature_maps;
    let nw = spec.filter_widths.len();
    let d = p.emb.ncols();
    let mut dpooled = head_backward(p, 2 * nw, cache.dropped.view(), dz, scale, grads);
    if let Some(mk) = mask {
        dpooled *= &ArrayView1::from(mk);
    }
    debug_assert_eq!(cache.pooled.len(), nw * m);
    for (wi, &w) in spec.filter_widths.iter().enumerate() {
        let filters = &p.dense[2 * wi];
        let win = &cache.windows[wi];
        let mut dwin: Array2<f64> = Array2::zeros(win.raw_dim());
        for j in 0..m {
            let g = dpooled[wi * m + j];
            let t = cache.argmax[wi][j];
            if g == 0.0 || cache.pre_act[wi][[t, j]] <= 0.0 {
                continue;
            }
            grads.dense[2 * wi].column_mut(j).scaled_add(g, &win.row(t));
            grads.dense[2 * wi + 1][[0, j]] += g;
            dwin.row_mut(t).scaled_add(g, &filters.column(j));
        }
        for t in 0..dwin.nrows() {
            for k in 0..w {
                if let Some(&id) = ids.get(t + k) {
                    let src = dwin.slice(s![t, k * d..(k + 1) * d]);
                    if src.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let row = grads.emb_row(id, d);
                    for (a, b) in row.iter_mut().zip(src.iter()) {
                        *a += b;
                    }
                }
            }
        }
    }
}

struct LstmCache {
    /// Per step: gate activations i, f, g, o (width 4H).
    gates: Array2<f64>,
    /// Cell states c_0..c_n (row 0 is the zero initial state).
    cells: Array2<f64>,
    /// Hidden states h_0..h_n (row 0 is the zero initial state).
    hidden: Array2<f64>,
    inputs: Array2<f64>,
    dropped: Array1<f64>,
    logits: [f64; NUM_CLASSES],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lstm_forward(spec: &LstmSpec, p: &Params, ids: &[usize], mask: Option<&[f64]>) -> LstmCache {
    let h = spec.hidden;
    let n = ids.len();
    let d = p.emb.ncols();
    let (wx, wh, b) = (&p.dense[0], &p.dense[1], p.dense[2].row(0));
    let mut inputs = Array2::zeros((n, d));
    for (t, &id) in ids.iter().enumerate() {
        inputs.row_mut(t).assign(&p.emb.row(id));
    }
    let projected = inputs.dot(wx);
    let mut gates = Array2::zeros((n, 4 * h));
    let mut cells = Array2::zeros((n + 1, h));
    let mut hidden = Array2::zeros((n + 1, h));
    for t in 0..n {
        let pre = &projected.row(t) + &hidden.row(t).dot(wh) + &b;
        for j in 0..h {
            let i_g = sigmoid(pre[j]);
            let f_g = sigmoid(pre[h + j]);
            let g_g = pre[2 * h + j].tanh();
            let o_g = sigmoid(pre[3 * h + j]);
            let c: f64 = f_g * cells[[t, j]] + i_g * g_g;
            cells[[t + 1, j]] = c;
            hidden[[t + 1, j]] = o_g * c.tanh();
            gates[[t, j]] = i_g;
            gates[[t, h + j]] = f_g;
            gates[[t, 2 * h + j]] = g_g;
            gates[[t, 3 * h + j]] = o_g;
        }
    }
    let last = hidden.row(n).to_owned();
    let dropped = match mask {
        Some(mk) => &last * &ArrayView1::from(mk),
        None => last,
    };
    let logits = head(p, 3, dropped.view());
    LstmCache {
        gates,
        cells,
        hidden,
        inputs,
        dropped,
        logits,
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    spec: &LstmSpec,
    p: &Params,
    ids: &[usize],
    cache: &LstmCache,
    mask: Option<&[f64]>,
    dz: &[f64; NUM_CLASSES],
    scale: f64,
    grads: &mut Grads,
) {
    let h = spec.hidden;
    let n = ids.len();
    let d = p.emb.ncols();
    let mut dh = head_backward(p, 3, cache.dropped.view(), dz, scale, grads);
    if let Some(mk) = mask {
        dh *= &ArrayView1::from(mk);
    }
    if n == 0 {
        return;
    }
    let wh = &p.dense[1];
    let mut dc: Array1<f64> = Array1::zeros(h);
    let mut dgates = Array2::zeros((n, 4 * h));
    for t in (0..n).rev() {
        let gate = cache.gates.row(t);
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
            let c = cache.cells[[t + 1, j]];
            let tc = c.tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o_g * (1.0 - tc * tc);
            let d_i = dc[j] * g_g;
            let d_g = dc[j] * i_g;
            let d_f = dc[j] * cache.cells[[t, j]];
            dgates[[t, j]] = d_i * i_g * (1.0 - i_g);
            dgates[[t, h + j]] = d_f * f_g * (1.0 - f_g);
            dgates[[t, 2 * h + j]] = d_g * (1.0 - g_g * g_g);
            dgates[[t, 3 * h + j]] = d_o * o_g * (1.0 - o_g);
            dc[j] *= f_g;
        }
        dh = wh.dot(&dgates.row(t));
    }
    let prev_hidden = cache.hidden.slice(s![0..n, ..]);
    grads.dense[0] += &cache.inputs.t().dot(&dgates);
    grads.dense[1] += &prev_hidden.t().dot(&dgates);
    grads.dense[2].row_mut(0).scaled_add(1.0, &dgates.sum_axis(Axis(0)));
    let dinputs = dgates.dot(&p.dense[0].t());
    for (t, &id) in ids.iter().enumerate() {
        let row = grads.emb_row(id, d);
        for (a, b) in row.iter_mut().zip(dinputs.row(t).iter()) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(arch: Architecture, vocab: usize, d: usize) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = Array2::from_shape_fn((vocab, d), |_| rng.gen_range(-0.25..0.25));
        Network::new(arch, emb, &mut rng)
    }

    #[test]
    fn affine_head_gradient_matches_closed_form() {
        // FastText over one token is a single affine layer on that row, so
        // dL/dW = input^T (softmax(z) - onehot(y)).
        let n = net(Architecture::FastText(FastTextSpec {}), 4, 5);
        let ids = [2];
        let mut grads = n.params.zero_grads();
        let (_, logits) = n.accumulate_grad(&ids, 1, None, 1.0, &mut grads);
        let mut p = logits;
        softmax_in_place(&mut p);
        p[1] -= 1.0;
        let x = n.params.emb.row(2);
        for k in 0..5 {
            for c in 0..3 {
                let expected = x[k] * p[c];
                assert!((grads.dense[0][[k, c]] - expected).abs() < 1e-15);
            }
        }
        for c in 0..3 {
            assert!((grads.dense[1][[0, c]] - p[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn special_rows_start_at_zero() {
        let n = net(Architecture::Lstm(LstmSpec { hidden: 3, dropout: 0.5 }), 5, 4);
        assert!(n.params.emb.row(PAD).iter().all(|&x| x == 0.0));
        assert!(n.params.emb.row(UNK).iter().all(|&x| x == 0.0));
        // forget-gate bias starts at one
        assert_eq!(n.params.dense[2][[0, 3]], 1.0);
        assert_eq!(n.params.dense[2][[0, 2]], 0.0);
    }

    #[test]
    fn empty_input_is_handled_by_every_architecture() {
        for arch in [
            Architecture::FastText(FastTextSpec {}),
            Architecture::Cnn(CnnSpec { filter_widths: vec![2, 3], feature_maps: 4, dropout: 0.5 }),
            Architecture::Lstm(LstmSpec { hidden: 3, dropout: 0.5 }),
        ] {
            let n = net(arch, 6, 4);
            let p = n.predict_proba(&[]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut g = n.params.zero_grads();
            let (loss, _) = n.accumulate_grad(&[], 0, None, 1.0, &mut g);
            assert!(loss.is_finite());
            assert!(g.emb.is_empty());
        }
    }
}
