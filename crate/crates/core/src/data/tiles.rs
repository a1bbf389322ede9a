use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::eval::RotatedBox;
use crate::tensor::Tensor;

/// Tile origins along one axis: `0, stride, 2*stride, ...`, with the last
/// origin clamped to `side - tile` so tiles stay in bounds. A tile larger
/// than the side yields the single origin 0.
pub fn plan_axis(side: usize, tile: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || tile == 0 || side == 0 {
        return Err(contract_err!("side, tile and stride must be >= 1"));
    }
    if tile >= side {
        return Ok(vec![0]);
    }
    let count = (side - tile).div_ceil(stride) + 1;
    Ok((0..count).map(|i| (i * stride).min(side - tile)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub tile: usize,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
    /// `(x, y)` origins, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl TilePlan {
    pub fn per_axis(&self) -> (usize, usize) {
        let xs = self.origins.iter().filter(|o| o.1 == self.origins[0].1).count();
        (xs, self.origins.len() / xs)
    }
}

/// Plan for a `width x height` image.
pub fn plan_tiles_rect(width: usize, height: usize, tile: usize, stride: usize) -> Result<TilePlan> {
    let xs = plan_axis(width, tile, stride)?;
    let ys = plan_axis(height, tile, stride)?;
    let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    Ok(TilePlan {
        tile,
        stride,
        width,
        height,
        origins,
    })
}

/// Plan for a square image.
pub fn plan_tiles(side: usize, tile: usize, stride: usize) -> Result<TilePlan> {
    plan_tiles_rect(side, side, tile, stride)
}

/// `tile x tile` crop of a `[C, H, W]` image at `(x, y)`, zero-filled past
/// the border.
pub fn crop(image: &Tensor, origin: (usize, usize), tile: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(dim_err!("crop expects [C, H, W], got {:?}", image.shape()));
    };
    let (ox, oy) = origin;
    let src = image.data();
    let mut out = vec![0.0f32; c * tile * tile];
    for ch in 0..c {
        for y in 0..tile.min(h.saturating_sub(oy)) {
            let s = ch * h * w + (oy + y) * w + ox;
            let len = tile.min(w.saturating_sub(ox));
            let d = ch * tile * tile + y * tile;
            out[d..d + len].copy_from_slice(&src[s..s + len]);
        }
    }
    Tensor::new(&[c, tile, tile], out)
}

/// Boxes whose centre falls inside the tile, shifted to tile coordinates.
pub fn tile_boxes(boxes: &[RotatedBox], origin: (usize, usize), tile: usize) -> Vec<RotatedBox> {
    let (x0, y0) = (origin.0 as f32, origin.1 as f32);
    let t = tile as f32;
    boxes
        .iter()
        .filter(|b| b.cx >= x0 && b.cx < x0 + t && b.cy >= y0 && b.cy < y0 + t)
        .map(|b| RotatedBox {
            cx: b.cx - x0,
            cy: b.cy - y0,
            ..*b
        })
        .collect()
}
