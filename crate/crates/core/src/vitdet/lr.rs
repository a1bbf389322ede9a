//! Fine-tuning learning-rate rules.

use alloc::vec;
use alloc::vec::Vec;

use super::pyramid::Task;
use crate::error::{contract_err, Result};

/// `base * decay^(num_layers - layer_index)`.
pub fn layerwise_lr(base: f64, decay: f64, layer_index: usize, num_layers: usize) -> Result<f64> {
    if layer_index > num_layers {
        return Err(contract_err!("layer index {layer_index} exceeds {num_layers}"));
    }
    Ok(base * libm::pow(decay, (num_layers - layer_index) as f64))
}

/// Decay index of a parameter for a backbone of `depth` sequential layers.
///
/// Patch embedding and position table are index 0, every branch of block `l`
/// (0-based) shares index `l + 1`, and everything else (final norm, pyramid,
/// head) gets `depth + 1`, the undecayed top.
pub fn layer_index_of(name: &str, depth: usize) -> usize {
    if name.starts_with("patch_embed.") || name == "pos_embed" {
        return 0;
    }
    if let Some(rest) = name.strip_prefix("blocks.") {
        if let Some(l) = rest.split('.').next().and_then(|s| s.parse::<usize>().ok()) {
            if l < depth {
                return l + 1;
            }
        }
    }
    depth + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSchedule {
    pub task: Task,
    pub lr: f64,
    pub weight_decay: f64,
    /// Detection: number of epochs.
    pub epochs: usize,
    /// Segmentation: number of iterations.
    pub iters: usize,
    /// Detection: 0-based epochs from which the LR is divided by 10 once more.
    pub decay_epochs: Vec<usize>,
    pub poly_power: f64,
    pub min_lr: f64,
    pub warmup_iters: usize,
    pub warmup_ratio: f64,
    pub layer_decay: f64,
    pub drop_path: f32,
}

impl FinetuneSchedule {
    pub fn detection() -> Self {
        Self {
            task: Task::Detection,
            lr: 1e-4,
            weight_decay: 0.05,
            epochs: 12,
            iters: 0,
            decay_epochs: vec![8, 11],
            poly_power: 1.0,
            min_lr: 0.0,
            warmup_iters: 0,
            warmup_ratio: 1.0,
            layer_decay: 0.8,
            drop_path: 0.1,
        }
    }

    /// Segmentation defaults with `iters` total iterations (80k and 160k in
    /// the two reference setups).
    pub fn segmentation(iters: usize) -> Self {
        Self {
            task: Task::Segmentation,
            lr: 6e-5,
            weight_decay: 0.01,
            epochs: 0,
            iters,
            decay_epochs: Vec::new(),
            poly_power: 1.0,
            min_lr: 0.0,
            warmup_iters: 1500,
            warmup_ratio: 1e-6,
            layer_decay: 0.8,
            drop_path: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(contract_err!("learning rate must be > 0 and weight decay >= 0"));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(contract_err!("drop path rate must be in [0, 1)"));
        }
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(contract_err!("layer decay must be in (0, 1]"));
        }
        match self.task {
            Task::Detection if self.epochs == 0 => Err(contract_err!("detection needs >= 1 epoch")),
            Task::Segmentation if self.iters == 0 => Err(contract_err!("segmentation needs >= 1 iteration")),
            _ => Ok(()),
        }
    }

    /// Step schedule for detection (`epoch` is 0-based).
    pub fn detection_lr(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&m| epoch >= m).count();
        self.lr * libm::pow(0.1, drops as f64)
    }

    /// Polynomial decay with linear warmup (`iter` is 0-based).
    pub fn segmentation_lr(&self, iter: usize) -> f64 {
        let progress = (iter.min(self.iters) as f64) / self.iters as f64;
        let regular = (self.lr - self.min_lr) * libm::pow(1.0 - progress, self.poly_power) + self.min_lr;
        if iter < self.warmup_iters {
            let k = (1.0 - iter as f64 / self.warmup_iters as f64) * (1.0 - self.warmup_ratio);
            regular * (1.0 - k)
        } else {
            regular
        }
    }

    /// Base LR of parameter `name` at this point of training, before any
    /// layer decay (epoch-based for detection, iteration-based otherwise).
    pub fn lr_at(&self, epoch: usize, iter: usize) -> f64 {
        match self.task {
            Task::Detection => self.detection_lr(epoch),
            Task::Segmentation => self.segmentation_lr(iter),
        }
    }

    /// LR for a named parameter including layer-wise decay.
    pub fn param_lr(&self, base: f64, name: &str, depth: usize) -> f64 {
        let idx = layer_index_of(name, depth);
        base * libm::pow(self.layer_decay, (depth + 1 - idx) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layerwise_values() {
        assert_eq!(layerwise_lr(2.0, 0.8, 12, 12).unwrap(), 2.0);
        let f = layerwise_lr(1.0, 0.8, 0, 12).unwrap();
        assert!((f - libm::pow(0.8, 12.0)).abs() < 1e-12);
        assert!((f - 0.0687).abs() < 1e-4);
        for i in 0..=12 {
            assert_eq!(layerwise_lr(3.0, 1.0, i, 12).unwrap(), 3.0);
        }
        assert!(layerwise_lr(1.0, 0.8, 13, 12).is_err());
    }

    #[test]
    fn parameter_indices() {
        assert_eq!(layer_index_of("patch_embed.weight", 12), 0);
        assert_eq!(layer_index_of("pos_embed", 12), 0);
        assert_eq!(layer_index_of("blocks.0.branch1.mlp.fc1.bias", 12), 1);
        assert_eq!(layer_index_of("blocks.11.branch0.norm1.weight", 12), 12);
        assert_eq!(layer_index_of("norm.weight", 12), 13);
        assert_eq!(layer_index_of("pyramid.s1.up1.weight", 12), 13);
        assert_eq!(layer_index_of("head.weight", 12), 13);
    }

    #[test]
    fn detection_steps() {
        let s = FinetuneSchedule::detection();
        assert_eq!(s.detection_lr(0), 1e-4);
        assert_eq!(s.detection_lr(7), 1e-4);
        assert!((s.detection_lr(8) - 1e-5).abs() < 1e-15);
        assert!((s.detection_lr(11) - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn segmentation_warmup_then_linear() {
        let s = FinetuneSchedule::segmentation(10_000);
        assert!((s.segmentation_lr(0) - 6e-5 * 1e-6).abs() < 1e-18);
        assert!((s.segmentation_lr(5000) - 3e-5).abs() < 1e-15);
        assert_eq!(s.segmentation_lr(10_000), 0.0);
        assert!(s.segmentation_lr(1499) < s.segmentation_lr(1500));
    }
}
