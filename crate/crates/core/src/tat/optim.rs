//! Adam with decoupled weight decay.

use nalgebra::DMatrix;

use crate::tat::tower::{LoraGrads, TowerParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `params` in place. `step` is 1-based.
    ///
    /// Decay is applied to the parameter directly, `p ← p · (1 − lr·λ)`,
    /// before the bias-corrected moment step.
    pub fn update(&self, params: &mut [f64], grads: &[f64], moments: &mut Moments, step: u64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), moments.m.len());
        assert!(step >= 1, "optimizer steps are 1-based");
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(moments.m.iter_mut())
            .zip(moments.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Optimizer state for one tower's adapter factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterOptState {
    pub a: Moments,
    pub b: Moments,
    pub step: u64,
}

impl AdapterOptState {
    pub fn new(params: &TowerParams) -> Self {
        Self {
            a: Moments::zeros(params.lora_a.len()),
            b: Moments::zeros(params.lora_b.len()),
            step: 0,
        }
    }
}

fn as_mut_slice(m: &mut DMatrix<f64>) -> &mut [f64] {
    m.as_mut_slice()
}

/// Applies one AdamW step to `lora_a` and `lora_b`; the base is untouched.
pub fn optimizer_step(params: &mut TowerParams, grads: &LoraGrads, state: &mut AdapterOptState, optimizer: &AdamW) {
    state.step += 1;
    optimizer.update(
        as_mut_slice(&mut params.lora_a),
        grads.a.as_slice(),
        &mut state.a,
        state.step,
    );
    optimizer.update(
        as_mut_slice(&mut params.lora_b),
        grads.b.as_slice(),
        &mut state.b,
        state.step,
    );
}
