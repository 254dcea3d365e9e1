use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelParams;
use crate::ndcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one flat buffer at step `t` (1-based).
pub fn adam_update(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// First and second moments, one buffer per parameter tensor in visit
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        params.visit(&mut |name, t| {
            names.push(name);
            m.push(vec![0.0; t.len()]);
        });
        Self {
            config,
            names,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One optimisation step. A zero learning rate leaves `params` bitwise
    /// unchanged.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<(), TrainError> {
        let mut flat = Vec::new();
        grads.visit(&mut |name, g| flat.push((name, g)));
        let mut shapes = Vec::new();
        params.visit(&mut |name, p| shapes.push((name, p.shape().to_vec(), p.len())));
        if shapes.len() != flat.len() || shapes.len() != self.m.len() {
            return Err(TrainError::Contract(format!(
                "{} gradients for {} parameters and {} moment buffers",
                flat.len(),
                shapes.len(),
                self.m.len()
            )));
        }
        for (i, ((pn, shape, len), (gn, g))) in shapes.iter().zip(&flat).enumerate() {
            if pn != gn || shape.as_slice() != g.shape() || *pn != self.names[i] || self.m[i].len() != *len {
                return Err(TrainError::Contract(format!(
                    "gradient {gn} {:?} does not match parameter {pn} {shape:?}",
                    g.shape()
                )));
            }
        }

        self.t += 1;
        if self.config.lr == 0.0 {
            return Ok(());
        }
        let (t, cfg) = (self.t, self.config);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut(&mut |_, p| {
            let shape = p.shape().to_vec();
            let mut theta = std::mem::replace(p, Tensor::scalar(0.0)).into_data();
            adam_update(&mut theta, &mut m[i], &mut v[i], flat[i].1.data(), t, &cfg);
            *p = Tensor::new(&shape, theta).expect("same length");
            i += 1;
        });
        Ok(())
    }
}
