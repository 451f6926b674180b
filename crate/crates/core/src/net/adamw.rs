use serde::{Deserialize, Serialize};

use super::network::{Gradients, MtlNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the parameters directly, not through the moments.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(config: AdamWConfig, net: &MtlNetwork) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self::new(config, &sizes)
    }

    /// One update. Gradients are checked for finiteness before anything is
    /// modified, so a failed step leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i}: parameter/gradient/moment lengths differ")));
            }
            if let Some((j, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                let tensor = names.get(i).cloned().unwrap_or_else(|| format!("tensor {i}"));
                return Err(Error::NonFinite { tensor, index: j, value });
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - c.lr * c.weight_decay * p[i] - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut MtlNetwork, grads: &Gradients) -> Result<()> {
        let names = net.param_names();
        let mut params = net.params_mut();
        self.step(&mut params, &grads.tensors, &names)
    }
}
