//! AdamW with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::params::{ParamEntry, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        // MAE / ViTDet recipes use beta2 = 0.95 for pretraining and 0.999 for fine-tuning;
        // callers override as needed.
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update of `params` in place.
///
/// `p <- p * (1 - lr*wd)`, then `p <- p - lr * m_hat / (sqrt(v_hat) + eps)` with
/// bias-corrected moments.
pub fn adamw_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    lr: f32,
    wd: f32,
    cfg: AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(contract_err!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::powf(cfg.beta1, t as f32);
    let bc2 = 1.0 - libm::powf(cfg.beta2, t as f32);
    let decay = 1.0 - lr * wd;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * decay - lr * m_hat / (libm::sqrtf(v_hat) + cfg.eps);
    }
    Ok(())
}

/// Learning rate and weight decay for one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupHyper {
    pub lr: f32,
    pub wd: f32,
}

/// AdamW over a whole [`ParamStore`]; moments are aligned with store entries.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: Vec<AdamState>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        Self {
            config,
            states: store
                .entries()
                .iter()
                .map(|e| AdamState::new(e.tensor.numel()))
                .collect(),
        }
    }

    /// Updates every trainable entry that has a gradient, then clears grads.
    pub fn step(&mut self, store: &mut ParamStore, hyper: impl Fn(usize, &ParamEntry) -> GroupHyper) -> Result<()> {
        if store.len() != self.states.len() {
            return Err(contract_err!(
                "optimizer built for {} tensors, store has {}",
                self.states.len(),
                store.len()
            ));
        }
        for (i, (e, st)) in store.entries_mut().iter_mut().zip(&mut self.states).enumerate() {
            if !e.trainable {
                continue;
            }
            let Some(g) = e.tensor.grad.take() else { continue };
            let h = hyper(i, e);
            adamw_step(e.tensor.data_mut(), &g, st, h.lr, h.wd, self.config)?;
        }
        Ok(())
    }
}

/// Conventional decay grouping: no weight decay on vectors (biases, norms, tokens).
pub fn decays(e: &ParamEntry) -> bool {
    e.tensor.rank() >= 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_no_decay_leaves_params() {
        let mut p = [1.0f32, -2.0, 3.5];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, 0.1, 0.0, AdamWConfig::default()).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_grads_with_decay_scales() {
        let mut p = [1.0f32, -2.0, 3.5];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, 0.1, 0.05, AdamWConfig::default()).unwrap();
        let f = 1.0 - 0.1 * 0.05;
        assert_eq!(p, [f, -2.0 * f, 3.5 * f]);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // first step: m_hat = g, v_hat = g^2
        let (p0, g, lr, wd, eps) = (0.7f64, -0.3f64, 0.01f64, 0.05f64, 1e-8f64);
        let expected = p0 * (1.0 - lr * wd) - lr * g / (g.abs() + eps);
        let mut p = [p0 as f32];
        let mut st = AdamState::new(1);
        let cfg = AdamWConfig {
            eps: eps as f32,
            ..Default::default()
        };
        adamw_step(&mut p, &[g as f32], &mut st, lr as f32, wd as f32, cfg).unwrap();
        assert!((p[0] as f64 - expected).abs() < 1e-7, "{} vs {expected}", p[0]);
    }

    #[test]
    fn length_mismatch() {
        let mut p = [0.0f32; 2];
        let mut st = AdamState::new(2);
        assert!(adamw_step(&mut p, &[0.0; 3], &mut st, 0.1, 0.0, AdamWConfig::default()).is_err());
    }
}
