use alloc::vec;

use super::tiles::{crop, plan_tiles_rect};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Full-image logits from tile-wise predictions.
///
/// `model` maps a `[C, tile, tile]` crop to `[K, tile, tile]` logits. Each
/// pixel's output is the mean over every tile covering it; sums run in plan
/// order so the result does not depend on scheduling.
pub fn sliding_infer(
    mut model: impl FnMut(&Tensor) -> Result<Tensor>,
    image: &Tensor,
    tile: usize,
    stride: usize,
) -> Result<Tensor> {
    let [_, h, w] = *image.shape() else {
        return Err(dim_err!("sliding_infer expects [C, H, W], got {:?}", image.shape()));
    };
    let plan = plan_tiles_rect(w, h, tile, stride)?;
    let mut sum: Option<(usize, alloc::vec::Vec<f32>)> = None;
    let mut count = vec![0u32; h * w];
    for &(ox, oy) in &plan.origins {
        let logits = model(&crop(image, (ox, oy), tile)?)?;
        let k = match logits.shape() {
            [k, th, tw] if *th == tile && *tw == tile => *k,
            s => return Err(dim_err!("model returned {s:?} for a {tile}x{tile} tile")),
        };
        let (kk, acc) = sum.get_or_insert_with(|| (k, vec![0.0f32; k * h * w]));
        if *kk != k {
            return Err(dim_err!("model changed class count from {kk} to {k}"));
        }
        let lv = logits.data();
        for y in 0..tile.min(h - oy) {
            for x in 0..tile.min(w - ox) {
                let p = (oy + y) * w + ox + x;
                count[p] += 1;
                for c in 0..k {
                    acc[c * h * w + p] += lv[c * tile * tile + y * tile + x];
                }
            }
        }
    }
    let (k, mut acc) = sum.expect("a plan has at least one tile");
    for c in 0..k {
        for p in 0..h * w {
            acc[c * h * w + p] /= count[p] as f32;
        }
    }
    Tensor::new(&[k, h, w], acc)
}
