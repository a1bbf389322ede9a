use alloc::format;

use crate::autograd::{Graph, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vitdet::FeaturePyramid;

/// Upsample-and-sum fusion of the four pyramid levels at the finest level,
/// followed by a 1x1 classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegHead {
    pub num_classes: usize,
    /// `[num_classes, width]`.
    pub weight: ParamId,
    pub bias: ParamId,
}

impl SegHead {
    pub fn new(store: &mut ParamStore, rng: &Rng, name: &str, width: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 1 {
            return Err(contract_err!("segmentation head needs at least one class"));
        }
        let wname = format!("{name}.weight");
        let bound = libm::sqrtf(6.0 / (width + num_classes) as f32);
        let w = Tensor::uniform(&[num_classes, width], bound, &mut rng.split_str(&wname))?;
        Ok(Self {
            num_classes,
            weight: store.add(wname, w, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[num_classes])?, true)?,
        })
    }

    /// Logits `[num_classes, 4g, 4g]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, pyr: &FeaturePyramid) -> Result<Var> {
        let (width, side) = match g.shape(pyr.p4) {
            [c, h, w] if h == w => (*c, *h),
            s => return Err(dim_err!("p4 must be a square map, got {s:?}")),
        };
        let mut fused = pyr.p4;
        for (level, factor) in [(pyr.p2, 2), (pyr.p1, 4), (pyr.p05, 8)] {
            let up = g.upsample_nearest(level, factor, side, side)?;
            fused = g.add(fused, up)?;
        }
        let flat = g.reshape(fused, &[width, side * side])?;
        let logits = g.matmul(b[self.weight], flat)?;
        let logits = g.add_col_vec(logits, b[self.bias])?;
        g.reshape(logits, &[self.num_classes, side, side])
    }
}
