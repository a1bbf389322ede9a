//! Patch flattening. A patch is flattened in `(row, col, channel)` order.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source offsets into a `[C, H, W]` image for the `[N, p*p*C]` patch matrix.
pub fn patchify_indices(c: usize, h: usize, w: usize, p: usize) -> Result<Vec<u32>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(dim_err!("image {h}x{w} is not divisible by patch {p}"));
    }
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(c * h * w);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        idx.push((ch * h * w + (py * p + dy) * w + px * p + dx) as u32);
                    }
                }
            }
        }
    }
    Ok(idx)
}

/// `[C, H, W]` image node to `[N, p*p*C]` patch rows (differentiable).
pub fn patchify<T: Scalar>(g: &mut Graph<T>, image: Var, patch: usize) -> Result<Var> {
    let (c, h, w) = match g.shape(image) {
        [c, h, w] => (*c, *h, *w),
        s => return Err(dim_err!("patchify expects [C, H, W], got {s:?}")),
    };
    let idx = patchify_indices(c, h, w, patch)?;
    let n = (h / patch) * (w / patch);
    g.gather(image, idx, &[n, patch * patch * c])
}

pub fn patchify_tensor(image: &Tensor, patch: usize) -> Result<Tensor> {
    let [c, h, w] = image.shape() else {
        return Err(dim_err!("patchify expects [C, H, W], got {:?}", image.shape()));
    };
    let idx = patchify_indices(*c, *h, *w, patch)?;
    let n = (h / patch) * (w / patch);
    let data = idx.iter().map(|&i| image.data()[i as usize]).collect();
    Tensor::new(&[n, patch * patch * c], data)
}

/// Inverse of [`patchify_tensor`] for an image of `channels x h x w`.
pub fn unpatchify_tensor(patches: &Tensor, channels: usize, h: usize, w: usize, patch: usize) -> Result<Tensor> {
    let idx = patchify_indices(channels, h, w, patch)?;
    if patches.numel() != idx.len() {
        return Err(dim_err!(
            "{:?} patches do not tile a {channels}x{h}x{w} image",
            patches.shape()
        ));
    }
    let mut data = alloc::vec![0.0f32; idx.len()];
    for (k, &i) in idx.iter().enumerate() {
        data[i as usize] = patches.data()[k];
    }
    Tensor::new(&[channels, h, w], data)
}
