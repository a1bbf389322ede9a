use alloc::vec::Vec;

use super::adapted::AdaptedModel;
use super::lr::FinetuneSchedule;
use super::pyramid::Task;
use super::schedule::AttentionSchedule;
use crate::autograd::{Graph, Var};
use crate::backbone::{BackboneConfig, DropPath};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::eval::{SegHead, SegMap};
use crate::optim::{decays, AdamW, AdamWConfig, GroupHyper};
use crate::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adapted backbone, pyramid and segmentation head (`head.*`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegModel {
    pub adapted: AdaptedModel,
    pub head: SegHead,
}

impl SegModel {
    pub fn new(
        cfg: BackboneConfig,
        schedule: AttentionSchedule,
        pyramid_width: usize,
        num_classes: usize,
        store: &mut ParamStore,
        rng: &Rng,
    ) -> Result<Self> {
        if !cfg.patch.is_multiple_of(4) {
            return Err(dim_err!(
                "segmentation needs a patch size divisible by 4, got {}",
                cfg.patch
            ));
        }
        let adapted = AdaptedModel::new(cfg, schedule, pyramid_width, store, rng)?;
        let head = SegHead::new(store, rng, "head", pyramid_width, num_classes)?;
        Ok(Self { adapted, head })
    }

    /// Logits `[classes, S, S]` at input resolution for a `[C, S, S]` image.
    pub fn logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: Var,
        drop: Option<&mut DropPath<'_>>,
    ) -> Result<Var> {
        let out = self.adapted.forward_image(g, b, image, drop)?;
        let pyr = self.adapted.build_pyramid(g, b, Task::Segmentation, &out)?;
        let logits = self.head.forward(g, b, &pyr)?;
        let factor = self.adapted.cfg().patch / 4;
        if factor == 1 {
            return Ok(logits);
        }
        let side = out.grid * self.adapted.cfg().patch;
        g.upsample_nearest(logits, factor, side, side)
    }

    /// Per-pixel cross entropy against `mask` (ignore id honoured).
    pub fn loss<T: Scalar>(&self, g: &mut Graph<T>, logits: Var, mask: &SegMap) -> Result<Var> {
        let (c, h, w) = match g.shape(logits) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(dim_err!("logits must be [C, H, W], got {s:?}")),
        };
        if (h, w) != (mask.height, mask.width) {
            return Err(contract_err!("logits {h}x{w} vs mask {}x{}", mask.height, mask.width));
        }
        let flat = g.reshape(logits, &[c, h * w])?;
        let rows = g.transpose(flat)?;
        g.cross_entropy(rows, &mask.labels, mask.ignore_id)
    }

    /// Arg-max prediction in evaluation mode.
    pub fn predict(&self, store: &ParamStore, image: &Tensor) -> Result<SegMap> {
        let logits = self.predict_logits(store, image)?;
        let [c, h, w] = *logits.shape() else { unreachable!() };
        SegMap::from_logits(logits.data(), c, h, w)
    }

    pub fn predict_logits(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let b = store.bind(&mut g);
        let img = g.constant(image);
        let logits = self.logits(&mut g, &b, img, None)?;
        Ok(g.to_tensor(logits))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOptions {
    pub schedule: FinetuneSchedule,
    pub batch: usize,
    pub adam: AdamWConfig,
}

impl FinetuneOptions {
    pub fn new(schedule: FinetuneSchedule, batch: usize) -> Self {
        Self {
            schedule,
            batch,
            adam: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Mean batch loss per iteration.
    pub loss_curve: Vec<f32>,
}

/// Iteration-based segmentation fine-tuning in place on `store`.
///
/// Samples are drawn epoch by epoch from a permutation keyed by the epoch
/// number; drop path uses a stream keyed by `(iteration, slot)`.
pub fn finetune_seg(
    model: &SegModel,
    store: &mut ParamStore,
    opts: &FinetuneOptions,
    data: &[(Tensor, SegMap)],
    rng: &Rng,
) -> Result<FinetuneReport> {
    let s = &opts.schedule;
    s.validate()?;
    if s.task != Task::Segmentation {
        return Err(contract_err!("finetune_seg needs a segmentation schedule"));
    }
    if data.is_empty() || opts.batch == 0 {
        return Err(contract_err!("fine-tuning needs data and batch >= 1"));
    }
    let depth = model.adapted.cfg().layers;
    let names: Vec<_> = store.entries().iter().map(|e| e.name.clone()).collect();
    let order_rng = rng.split_str("order");
    let drop_rng = rng.split_str("drop");
    let mut opt = AdamW::new(store, opts.adam);
    let mut report = FinetuneReport {
        loss_curve: Vec::with_capacity(s.iters),
    };
    let n = data.len();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    for it in 0..s.iters {
        let mut total = 0.0f64;
        for slot in 0..opts.batch {
            if cursor == order.len() {
                order = order_rng.split(epoch).permutation(n);
                epoch += 1;
                cursor = 0;
            }
            let (image, mask) = &data[order[cursor]];
            cursor += 1;
            let mut g = Graph::<f32>::new();
            let b = store.bind(&mut g);
            let img = g.constant(image);
            let mut drng = drop_rng.split(it as u64).split(slot as u64);
            let mut drop = DropPath {
                rate: s.drop_path,
                rng: &mut drng,
            };
            let logits = model.logits(&mut g, &b, img, Some(&mut drop))?;
            let loss = model.loss(&mut g, logits, mask)?;
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch as usize,
                    step: it,
                    loss: lv,
                });
            }
            total += lv as f64;
            let grads = g.backward(loss)?;
            store.absorb_grads(&grads, &b, 1.0 / opts.batch as f32)?;
        }
        let base = s.segmentation_lr(it);
        opt.step(store, |i, e| GroupHyper {
            lr: s.param_lr(base, &names[i], depth) as f32,
            wd: if decays(e) { s.weight_decay as f32 } else { 0.0 },
        })?;
        report.loss_curve.push((total / opts.batch as f64) as f32);
    }
    Ok(report)
}
