//! Bicubic resizing of a square position table.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// Keys-cubic coefficient (`a = -0.75`).
const CUBIC_A: f64 = -0.75;

fn cubic_weights(t: f64) -> [f64; 4] {
    let a = CUBIC_A;
    let near = |x: f64| ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// For each output position: four clamped source indices and their weights,
/// with half-pixel alignment.
pub fn bicubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let x0 = libm::floor(x);
            let w = cubic_weights(x - x0);
            let clamp = |k: i64| (k.max(0) as usize).min(src - 1);
            let i = x0 as i64;
            ([clamp(i - 1), clamp(i), clamp(i + 1), clamp(i + 2)], w)
        })
        .collect()
}

/// Resizes a `[g0*g0, h]` table to `[g*g, h]`. Same size returns a copy.
pub fn interpolate_pos(table: &Tensor, target_grid: usize) -> Result<Tensor> {
    let [n, h] = *table.shape() else {
        return Err(dim_err!("position table must be [g*g, h], got {:?}", table.shape()));
    };
    if target_grid == 0 {
        return Err(contract_err!("target grid must be >= 1"));
    }
    let g0 = libm::sqrt(n as f64) as usize;
    if g0 * g0 != n {
        return Err(dim_err!("position table has {n} rows, not a square grid"));
    }
    if g0 == target_grid {
        return Ok(table.clone());
    }
    let taps = bicubic_taps(g0, target_grid);
    let src = table.data();
    // columns first, then rows
    let mut mid = vec![0.0f64; g0 * target_grid * h];
    for y in 0..g0 {
        for (x, (idx, w)) in taps.iter().enumerate() {
            let d = (y * target_grid + x) * h;
            for k in 0..4 {
                let s = (y * g0 + idx[k]) * h;
                for c in 0..h {
                    mid[d + c] += w[k] * src[s + c] as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f32; target_grid * target_grid * h];
    for (y, (idx, w)) in taps.iter().enumerate() {
        for x in 0..target_grid {
            let d = (y * target_grid + x) * h;
            for c in 0..h {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += w[k] * mid[(idx[k] * target_grid + x) * h + c];
                }
                out[d + c] = acc as f32;
            }
        }
    }
    Tensor::new(&[target_grid * target_grid, h], out)
}
