use crate::error::{contract_err, Result};

/// Pretraining hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainSchedule {
    pub epochs: usize,
    pub base_lr: f32,
    pub weight_decay: f32,
    pub batch: usize,
    pub mask_ratio: f32,
    pub warmup_epochs: usize,
}

/// Linear warmup length: 5% of the epochs, rounded, at least one.
pub fn default_warmup(epochs: usize) -> usize {
    (libm::round(epochs as f64 * 0.05) as usize).max(1).min(epochs)
}

impl PretrainSchedule {
    /// Published settings for a model name: 400 epochs, base LR 1.5e-4 and
    /// weight decay 0.05, except base LR 1e-4 for `ViT-G12x4` and 1600
    /// epochs for the `ViT-B12x1` reference model. Batch is the desk
    /// default of 8.
    pub fn for_model(name: &str) -> Self {
        let epochs = if name == "ViT-B12x1" { 1600 } else { 400 };
        let base_lr = if name == "ViT-G12x4" { 1e-4 } else { 1.5e-4 };
        Self {
            epochs,
            base_lr,
            weight_decay: 0.05,
            batch: 8,
            mask_ratio: 0.75,
            warmup_epochs: default_warmup(epochs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(contract_err!("epochs and batch must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(contract_err!("mask ratio {} outside [0, 1)", self.mask_ratio));
        }
        if self.warmup_epochs > self.epochs {
            return Err(contract_err!("warmup longer than training"));
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f32 {
        effective_lr(self.batch, self.base_lr)
    }

    /// Learning rate at fractional epoch `epoch`: linear warmup to the peak,
    /// then half-cosine to zero at the last epoch.
    pub fn lr_at(&self, epoch: f64) -> f32 {
        let peak = self.peak_lr() as f64;
        let w = self.warmup_epochs as f64;
        let lr = if epoch < w {
            peak * epoch / w
        } else {
            let span = (self.epochs as f64 - w).max(f64::MIN_POSITIVE);
            let progress = ((epoch - w) / span).min(1.0);
            peak * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
        };
        lr as f32
    }
}

/// `batch * base_lr / 256`.
pub fn effective_lr(batch: usize, base_lr: f32) -> f32 {
    (batch as f64 * base_lr as f64 / 256.0) as f32
}
