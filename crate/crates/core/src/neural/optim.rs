use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    RmsProp {
        lr: f64,
        rho: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerConfig::RmsProp {
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Adam { .. } => "adam",
            OptimizerConfig::RmsProp { .. } => "rmsprop",
        }
    }
}

/// Optimizer moments, laid out like the parameters they update.
pub struct Optimizer {
    config: OptimizerConfig,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &Params) -> Self {
        let zeros = || {
            std::iter::once(Array2::zeros(params.emb.raw_dim()))
                .chain(params.dense.iter().map(|t| Array2::zeros(t.raw_dim())))
                .collect::<Vec<_>>()
        };
        Optimizer {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Applies one update. Embedding rows without a gradient are treated
    /// as having a zero gradient.
    pub fn step(&mut self, params: &mut Params, grads: &Grads) {
        self.step += 1;
        let dim = params.emb.ncols();
        let zero_row = vec![0.0; dim];
        for r in 0..params.emb.nrows() {
            let g = grads.emb.get(&r).map_or(zero_row.as_slice(), Vec::as_slice);
            let offset = r * dim;
            let theta = &mut params.emb.as_slice_mut().unwrap()[offset..offset + dim];
            let m = &mut self.first[0].as_slice_mut().unwrap()[offset..offset + dim];
            let v = &mut self.second[0].as_slice_mut().unwrap()[offset..offset + dim];
            update(self.config, self.step, theta, g, m, v);
        }
        for (i, (t, g)) in params.dense.iter_mut().zip(&grads.dense).enumerate() {
            update(
                self.config,
                self.step,
                t.as_slice_mut().unwrap(),
                g.as_slice().unwrap(),
                self.first[i + 1].as_slice_mut().unwrap(),
                self.second[i + 1].as_slice_mut().unwrap(),
            );
        }
    }
}

fn update(cfg: OptimizerConfig, step: i32, theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    match cfg {
        OptimizerConfig::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..theta.len() {
                if g[i] == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                    continue;
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        OptimizerConfig::RmsProp { lr, rho, eps } => {
            for i in 0..theta.len() {
                if g[i] == 0.0 && v[i] == 0.0 {
                    continue;
                }
                v[i] = rho * v[i] + (1.0 - rho) * g[i] * g[i];
                theta[i] -= lr * g[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
