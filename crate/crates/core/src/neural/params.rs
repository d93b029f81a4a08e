use std::collections::BTreeMap;

use ndarray::Array2;

/// Trainable parameters: the embedding matrix plus the dense tensors of
/// the network body, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub emb: Array2<f64>,
    pub dense: Vec<Array2<f64>>,
    pub names: Vec<&'static str>,
}

/// Gradients matching a [`Params`] layout. Embedding gradients are kept
/// sparse, keyed by row.
#[derive(Clone, Debug)]
pub struct Grads {
    pub emb: BTreeMap<usize, Vec<f64>>,
    pub dense: Vec<Array2<f64>>,
}

impl Params {
    pub fn zero_grads(&self) -> Grads {
        Grads {
            emb: BTreeMap::new(),
            dense: self.dense.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.emb.iter().all(|x| x.is_finite())
            && self.dense.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `(name, l2 norm)` of every tensor, embedding first.
    pub fn norms(&self) -> Vec<(String, f64)> {
        let norm = |t: &Array2<f64>| t.iter().map(|x| x * x).sum::<f64>().sqrt();
        std::iter::once(("embedding".to_string(), norm(&self.emb)))
            .chain(self.names.iter().zip(&self.dense).map(|(n, t)| (n.to_string(), norm(t))))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.emb.len() + self.dense.iter().map(Array2::len).sum::<usize>()
    }

    /// Mutable reference to flat parameter `i`: embedding entries first,
    /// then each dense tensor in row-major order.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        if i < self.emb.len() {
            let d = self.emb.ncols();
            return &mut self.emb[[i / d, i % d]];
        }
        i -= self.emb.len();
        for t in &mut self.dense {
            if i < t.len() {
                let c = t.ncols();
                return &mut t[[i / c, i % c]];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range")
    }
}

impl Grads {
    pub fn emb_row(&mut self, row: usize, dim: usize) -> &mut Vec<f64> {
        self.emb.entry(row).or_insert_with(|| vec![0.0; dim])
    }

    /// `self += other`
    pub fn add(&mut self, other: &Grads) {
        for (row, g) in &other.emb {
            let dst = self.emb_row(*row, g.len());
            for (a, b) in dst.iter_mut().zip(g) {
                *a += b;
            }
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.emb.values_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
        for t in &mut self.dense {
            t.mapv_inplace(|x| x * s);
        }
    }

    /// Flat gradient entry `i` in the [`Params::flat_mut`] order.
    pub fn flat(&self, mut i: usize, emb_shape: (usize, usize)) -> f64 {
        let emb_len = emb_shape.0 * emb_shape.1;
        if i < emb_len {
            let (r, c) = (i / emb_shape.1, i % emb_shape.1);
            return self.emb.get(&r).map_or(0.0, |g| g[c]);
        }
        i -= emb_len;
        for t in &self.dense {
            if i < t.len() {
                let c = t.ncols();
                return t[[i / c, i % c]];
            }
            i -= t.len();
        }
        panic!("flat gradient index out of range")
    }
}
