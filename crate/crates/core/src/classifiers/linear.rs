use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, ClassWeights};
use crate::features::FeatureMatrix;
use crate::util::{argmax, softmax_in_place};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearLoss {
    /// Multinomial logistic regression, fit with L-BFGS.
    Logistic,
    /// One-vs-rest hinge loss, fit by dual coordinate descent.
    Hinge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            c: 1.0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub loss: LinearLoss,
    pub n_classes: usize,
    pub n_features: usize,
    /// `n_classes x n_features`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearModel {
    pub fn scores(&self, x: &FeatureMatrix, i: usize) -> Vec<f64> {
        let row = x.row(i);
        (0..self.n_classes)
            .map(|k| row.dot(&self.weights[k * self.n_features..(k + 1) * self.n_features]) + self.bias[k])
            .collect()
    }

    pub fn predict_labels(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok((0..x.n_rows()).map(|i| argmax(&self.scores(x, i))).collect())
    }
}

/// Trains a linear classifier. Sample `i` carries loss weight
/// `weights[y[i]]`.
pub fn train_linear(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    loss: LinearLoss,
    weights: &ClassWeights,
    params: &LinearParams,
    seed: u64,
) -> Result<LinearModel> {
    check_rows(x, y, n_classes)?;
    if params.c <= 0.0 {
        return Err(Error::InvalidArgument("C must be positive".into()));
    }
    if weights.0.len() != n_classes {
        return Err(Error::Shape("class weight count differs from n_classes".into()));
    }
    let nf = x.n_cols();
    if let Some(&only) = y.first() {
        if y.iter().all(|&c| c == only) {
            log::warn!("training labels contain a single class; fitting a constant model");
            let mut bias = vec![0.0; n_classes];
            bias[only] = 1.0;
            return Ok(LinearModel {
                loss,
                n_classes,
                n_features: nf,
                weights: vec![0.0; n_classes * nf],
                bias,
                c: params.c,
                converged: true,
                iterations: 0,
            });
        }
    } else {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    match loss {
        LinearLoss::Logistic => fit_logistic(x, y, n_classes, weights, params),
        LinearLoss::Hinge => fit_hinge(x, y, n_classes, weights, params, seed),
    }
}

/// Objective `0.5 |W|^2 + C sum_i s_i CE_i` over (W, b); bias unpenalized.
fn logistic_objective(
    x: &FeatureMatrix,
    y: &[usize],
    k: usize,
    sample_w: &[f64],
    c: f64,
    theta: &[f64],
    grad: &mut [f64],
) -> f64 {
    let nf = x.n_cols();
    let (w, b) = theta.split_at(k * nf);
    grad.fill(0.0);
    let mut f = 0.0;
    let mut z = vec![0.0; k];
    for i in 0..x.n_rows() {
        let row = x.row(i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = row.dot(&w[j * nf..(j + 1) * nf]) + b[j];
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let s = c * sample_w[i];
        f += s * (lse - z[y[i]]);
        softmax_in_place(&mut z);
        z[y[i]] -= 1.0;
        let (gw, gb) = grad.split_at_mut(k * nf);
        for j in 0..k {
            let d = s * z[j];
            if d != 0.0 {
                row.axpy(d, &mut gw[j * nf..(j + 1) * nf]);
            }
            gb[j] += d;
        }
    }
    for (g, wv) in grad.iter_mut().zip(w) {
        *g += wv;
        f += 0.5 * wv * wv;
    }
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fit_logistic(
    x: &FeatureMatrix,
    y: &[usize],
    k: usize,
    weights: &ClassWeights,
    params: &LinearParams,
) -> Result<LinearModel> {
    let nf = x.n_cols();
    let dim = k * nf + k;
    let sample_w: Vec<f64> = y.iter().map(|&c| weights.get(c)).collect();
    let objective = |theta: &[f64], g: &mut [f64]| logistic_objective(x, y, k, &sample_w, params.c, theta, g);
    let (theta, iterations, converged) = lbfgs(dim, objective, params.max_iter, params.tol);
    let (w, b) = theta.split_at(k * nf);
    Ok(LinearModel {
        loss: LinearLoss::Logistic,
        n_classes: k,
        n_features: nf,
        weights: w.to_vec(),
        bias: b.to_vec(),
        c: params.c,
        converged,
        iterations,
    })
}

/// Limited-memory BFGS with a backtracking Armijo line search, starting
/// from zero. Returns `(theta, iterations, converged)`.
fn lbfgs(
    dim: usize,
    mut objective: impl FnMut(&[f64], &mut [f64]) -> f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, usize, bool) {
    const MEMORY: usize = 10;
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut f = objective(&theta, &mut grad);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(MEMORY);
    let mut next = vec![0.0; dim];
    let mut next_grad = vec![0.0; dim];
    for iter in 0..max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= tol * f.abs().max(1.0) {
            return (theta, iter, true);
        }
        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(yv) {
                *d -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = history
            .last()
            .map_or(1.0 / gnorm.max(1.0), |(s, yv, _)| dot(s, yv) / dot(yv, yv));
        for d in &mut dir {
            *d *= gamma;
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g / gnorm.max(1.0)).collect();
            slope = dot(&grad, &dir);
        }
        let mut step = 1.0;
        let mut f_next;
        loop {
            for i in 0..dim {
                next[i] = theta[i] + step * dir[i];
            }
            f_next = objective(&next, &mut next_grad);
            if f_next <= f + 1e-4 * step * slope || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }
        if step < 1e-12 {
            return (theta, iter, false);
        }
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.remove(0);
            }
            history.push((s, yv, 1.0 / sy));
        }
        let improvement = (f - f_next).abs() / f.abs().max(1.0);
        std::mem::swap(&mut theta, &mut next);
        std::mem::swap(&mut grad, &mut next_grad);
        f = f_next;
        if improvement < 1e-12 {
            return (theta, iter + 1, true);
        }
    }
    (theta, max_iter, false)
}

/// One-vs-rest L1-loss SVM via dual coordinate descent. The bias is an
/// extra constant feature of value 1 and is regularized with the weights.
/// Stop when the projected-gradient spread over an epoch falls below this;
/// the customary tolerance for dual coordinate descent.
const HINGE_PG_TOL: f64 = 0.1;

fn fit_hinge(
    x: &FeatureMatrix,
    y: &[usize],
    k: usize,
    weights: &ClassWeights,
    params: &LinearParams,
    seed: u64,
) -> Result<LinearModel> {
    let nf = x.n_cols();
    let n = x.n_rows();
    let q: Vec<f64> = (0..n).map(|i| x.row(i).sq_norm() + 1.0).collect();
    let upper: Vec<f64> = y.iter().map(|&c| params.c * weights.get(c)).collect();
    let mut all_w = vec![0.0; k * nf];
    let mut all_b = vec![0.0; k];
    let mut converged = true;
    let mut max_epochs = 0;
    for class in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64));
        let sign: Vec<f64> = y.iter().map(|&c| if c == class { 1.0 } else { -1.0 }).collect();
        let mut alpha = vec![0.0; n];
        let w = &mut all_w[class * nf..(class + 1) * nf];
        let mut b = 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut done = false;
        let mut epoch = 0;
        while epoch < params.max_iter {
            epoch += 1;
            order.shuffle(&mut rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let row = x.row(i);
                let g = sign[i] * (row.dot(w) + b) - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] >= upper[i] {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / q[i]).clamp(0.0, upper[i]);
                    let delta = (alpha[i] - old) * sign[i];
                    if delta != 0.0 {
                        row.axpy(delta, w);
                        b += delta;
                    }
                }
            }
            if pg_max - pg_min < HINGE_PG_TOL {
                done = true;
                break;
            }
        }
        max_epochs = max_epochs.max(epoch);
        converged &= done;
        all_b[class] = b;
    }
    if !converged {
        log::warn!("hinge solver stopped at max_iter = {} without converging", params.max_iter);
    }
    Ok(LinearModel {
        loss: LinearLoss::Hinge,
        n_classes: k,
        n_features: nf,
        weights: all_w,
        bias: all_b,
        c: params.c,
        converged,
        iterations: max_epochs,
    })
}
