//! Square window partitioning of a `g x g` token grid.
//!
//! Grids are zero-padded on the bottom/right up to a multiple of the window
//! side. Inside attention, padded positions are left out of every window so
//! they never act as keys.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadMeta {
    pub grid: usize,
    pub padded: usize,
    pub window: usize,
}

impl PadMeta {
    pub fn new(grid: usize, window: usize) -> Self {
        Self {
            grid,
            padded: grid.div_ceil(window) * window,
            window,
        }
    }

    pub fn windows_per_side(&self) -> usize {
        self.padded / self.window
    }

    pub fn num_windows(&self) -> usize {
        self.windows_per_side() * self.windows_per_side()
    }
}

/// `[g, g, h]` -> `[n, w*w, h]` windows (row-major over windows and within each).
pub fn window_partition(x: &Tensor, window: usize) -> Result<(Tensor, PadMeta)> {
    let [g, g2, h] = *x.shape() else {
        return Err(dim_err!("window_partition expects [g, g, h], got {:?}", x.shape()));
    };
    if g != g2 || window == 0 {
        return Err(dim_err!("window_partition needs a square grid and window >= 1"));
    }
    let meta = PadMeta::new(g, window);
    let per = meta.windows_per_side();
    let src = x.data();
    let mut out = vec![0.0f32; meta.num_windows() * window * window * h];
    for wy in 0..per {
        for wx in 0..per {
            let wi = wy * per + wx;
            for dy in 0..window {
                for dx in 0..window {
                    let (y, xx) = (wy * window + dy, wx * window + dx);
                    if y >= g || xx >= g {
                        continue;
                    }
                    let dst = (wi * window * window + dy * window + dx) * h;
                    let s = (y * g + xx) * h;
                    out[dst..dst + h].copy_from_slice(&src[s..s + h]);
                }
            }
        }
    }
    Ok((Tensor::new(&[meta.num_windows(), window * window, h], out)?, meta))
}

/// Inverse of [`window_partition`], cropping the padding away.
pub fn window_unpartition(windows: &Tensor, meta: PadMeta) -> Result<Tensor> {
    let w = meta.window;
    let [n, ww, h] = *windows.shape() else {
        return Err(dim_err!(
            "window_unpartition expects [n, w*w, h], got {:?}",
            windows.shape()
        ));
    };
    if n != meta.num_windows() || ww != w * w {
        return Err(dim_err!("{:?} windows do not match {meta:?}", windows.shape()));
    }
    let per = meta.windows_per_side();
    let g = meta.grid;
    let src = windows.data();
    let mut out = vec![0.0f32; g * g * h];
    for y in 0..g {
        for x in 0..g {
            let wi = (y / w) * per + x / w;
            let s = (wi * w * w + (y % w) * w + x % w) * h;
            let d = (y * g + x) * h;
            out[d..d + h].copy_from_slice(&src[s..s + h]);
        }
    }
    Tensor::new(&[g, g, h], out)
}

/// Real (unpadded) token indices of each window, in window order.
pub fn window_groups(grid: usize, window: usize) -> Vec<Vec<usize>> {
    let meta = PadMeta::new(grid, window.max(1));
    let per = meta.windows_per_side();
    let w = meta.window;
    let mut groups = Vec::with_capacity(meta.num_windows());
    for wy in 0..per {
        for wx in 0..per {
            let mut grp = Vec::with_capacity(w * w);
            for dy in 0..w {
                for dx in 0..w {
                    let (y, x) = (wy * w + dy, wx * w + dx);
                    if y < grid && x < grid {
                        grp.push(y * grid + x);
                    }
                }
            }
            groups.push(grp);
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(g: usize, h: usize) -> Tensor {
        Tensor::from_fn(&[g, g, h], |i| i as f32 + 1.0).unwrap()
    }

    #[test]
    fn divisible_grid() {
        let (w, meta) = window_partition(&grid(56, 2), 14).unwrap();
        assert_eq!(w.shape(), &[16, 196, 2]);
        assert_eq!(meta.padded, 56);
        assert_eq!(window_unpartition(&w, meta).unwrap(), grid(56, 2));
    }

    #[test]
    fn padded_grid() {
        let x = grid(64, 3);
        let (w, meta) = window_partition(&x, 14).unwrap();
        assert_eq!(meta.padded, 70);
        assert_eq!(w.shape(), &[25, 196, 3]);
        // last window is mostly padding
        let zeros = w.data()[24 * 196 * 3..].iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, (196 - 64) * 3);
        assert_eq!(window_unpartition(&w, meta).unwrap(), x);
    }

    #[test]
    fn single_window() {
        let (w, _) = window_partition(&grid(14, 1), 14).unwrap();
        assert_eq!(w.shape(), &[1, 196, 1]);
        assert_eq!(window_groups(14, 14), alloc::vec![(0..196).collect::<Vec<_>>()]);
        assert_eq!(window_groups(5, 14), alloc::vec![(0..25).collect::<Vec<_>>()]);
    }

    #[test]
    fn groups_partition_tokens() {
        let groups = window_groups(10, 4);
        assert_eq!(groups.len(), 9);
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(groups[0][..5], [0, 1, 2, 3, 10]);
        assert_eq!(groups[8], alloc::vec![88, 89, 98, 99]);
    }
}
