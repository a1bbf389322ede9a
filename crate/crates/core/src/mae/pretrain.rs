use alloc::vec::Vec;

use super::augment::{augment, AugmentPolicy};
use super::mask::make_mask_plan;
use super::model::{mae_loss, MaeModel};
use super::schedule::PretrainSchedule;
use crate::autograd::Graph;
use crate::error::{contract_err, Error, Result};
use crate::optim::{decays, AdamW, AdamWConfig, GroupHyper};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub policy: AugmentPolicy,
    pub adam: AdamWConfig,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            policy: AugmentPolicy::default(),
            adam: AdamWConfig {
                beta1: 0.9,
                beta2: 0.95,
                eps: 1e-8,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Mean reconstruction loss per epoch.
    pub loss_curve: Vec<f32>,
    /// Loss of the very first sample, before any update.
    pub first_step_loss: f32,
    /// Set when the mask ratio hides nothing: the loss is defined as 0 and no
    /// update happens.
    pub degenerate: bool,
    pub steps: usize,
}

/// Runs MAE pretraining in place on `store`.
///
/// Every sample draws its augmentation and mask from a stream keyed by
/// `(epoch, dataset index)`, and the epoch order from a stream keyed by the
/// epoch, so results do not depend on how samples are scheduled.
pub fn pretrain(
    model: &MaeModel,
    store: &mut ParamStore,
    schedule: &PretrainSchedule,
    dataset: &[Tensor],
    rng: &Rng,
    opts: &PretrainOptions,
) -> Result<PretrainReport> {
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(contract_err!("pretraining dataset is empty"));
    }
    let cfg = *model.cfg();
    let n = dataset.len();
    let per_epoch = n.div_ceil(schedule.batch);
    let order_rng = rng.split_str("order");
    let sample_rng = rng.split_str("sample");
    let mut opt = AdamW::new(store, opts.adam);
    let mut report = PretrainReport {
        loss_curve: Vec::with_capacity(schedule.epochs),
        first_step_loss: f32::NAN,
        degenerate: false,
        steps: 0,
    };

    for epoch in 0..schedule.epochs {
        let order = order_rng.split(epoch as u64).permutation(n);
        let mut epoch_loss = 0.0f64;
        for (bi, chunk) in order.chunks(schedule.batch).enumerate() {
            let step = epoch * per_epoch + bi;
            let lr = schedule.lr_at(step as f64 / per_epoch as f64);
            let weight = 1.0 / chunk.len() as f32;
            let mut updated = false;
            for &idx in chunk {
                let mut srng = sample_rng.split(epoch as u64).split(idx as u64);
                let image = augment(&dataset[idx], cfg.image, &opts.policy, &mut srng)?;
                let plan = make_mask_plan(cfg.tokens(), schedule.mask_ratio, &mut srng.split_str("mask"))?;
                if plan.masked_idx.is_empty() {
                    report.degenerate = true;
                    if report.first_step_loss.is_nan() {
                        report.first_step_loss = 0.0;
                    }
                    continue;
                }
                let diverged = |loss: f32| Error::Diverged { epoch, step, loss };
                let mut g = Graph::<f32>::new();
                let b = store.bind(&mut g);
                let img = g.constant(&image);
                let out = model.forward(&mut g, &b, img, &plan).map_err(|e| match e {
                    Error::NonFinite(_) => diverged(f32::NAN),
                    e => e,
                })?;
                let loss = mae_loss(&mut g, out.pred, img, &plan, cfg.patch).map_err(|e| match e {
                    Error::NonFinite(_) => diverged(f32::NAN),
                    e => e,
                })?;
                let lv = g.scalar(loss);
                if !lv.is_finite() {
                    return Err(diverged(lv));
                }
                if report.first_step_loss.is_nan() {
                    report.first_step_loss = lv;
                }
                epoch_loss += lv as f64;
                let grads = g.backward(loss)?;
                store.absorb_grads(&grads, &b, weight)?;
                updated = true;
            }
            if updated {
                let wd = schedule.weight_decay;
                opt.step(store, |_, e| GroupHyper {
                    lr,
                    wd: if decays(e) { wd } else { 0.0 },
                })?;
                report.steps += 1;
            }
        }
        report.loss_curve.push((epoch_loss / n as f64) as f32);
    }
    Ok(report)
}
