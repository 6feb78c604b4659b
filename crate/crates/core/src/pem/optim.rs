use std::f64::consts::PI;

use super::params::{PemWeights, TensorKind};

/// Adam hyperparameters. Weight decay is decoupled from the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// One update of every entry of `params`, decaying all of them.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, hp: &AdamConfig) {
        self.step += 1;
        let (bc1, bc2) = self.corrections(hp);
        update(params, grads, &mut self.m, &mut self.v, lr, hp, bc1, bc2, true);
    }

    fn corrections(&self, hp: &AdamConfig) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - hp.beta1.powi(t), 1.0 - hp.beta2.powi(t))
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    hp: &AdamConfig,
    bc1: f64,
    bc2: f64,
    decay: bool,
) {
    for i in 0..p.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        if decay {
            p[i] -= lr * hp.weight_decay * p[i];
        }
        p[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Adam step on a model. Decay applies to weight matrices only; biases, norm
/// parameters and positional embeddings are left undecayed.
pub fn adam_step(w: &mut PemWeights, grads: &[f64], state: &mut AdamState, lr: f64, hp: &AdamConfig) {
    assert_eq!(grads.len(), w.data.len());
    state.step += 1;
    let (bc1, bc2) = state.corrections(hp);
    for spec in &w.layout.tensors {
        let r = spec.range();
        update(
            &mut w.data[r.clone()],
            &grads[r.clone()],
            &mut state.m[r.clone()],
            &mut state.v[r],
            lr,
            hp,
            bc1,
            bc2,
            spec.kind == TensorKind::Weight,
        );
    }
    w.touch();
}

/// `lr0 · (1 + cos(π·epoch/total)) / 2`; `epoch` may be fractional.
pub fn cosine_lr(epoch: f64, total: f64, lr0: f64) -> f64 {
    lr0 * (1.0 + (PI * epoch / total).cos()) / 2.0
}
