//! Pretraining augmentation: random resized crop, then independent
//! horizontal and vertical flips.

use alloc::vec;

use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MIN_AUGMENT_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub crop: bool,
    /// Fraction of the source area kept by the crop.
    pub scale: (f64, f64),
    /// Crop aspect ratio (width / height), sampled log-uniformly.
    pub ratio: (f64, f64),
    pub hflip_p: f64,
    pub vflip_p: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            crop: true,
            scale: (0.2, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_p: 0.5,
            vflip_p: 0.5,
        }
    }
}

/// Crop window `(top, left, height, width)` with the usual ten-attempt
/// sampling and a centred fallback.
pub fn sample_crop(h: usize, w: usize, policy: &AugmentPolicy, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (libm::log(policy.ratio.0), libm::log(policy.ratio.1));
    for _ in 0..10 {
        let target = area * rng.uniform_range(policy.scale.0, policy.scale.1);
        let aspect = libm::exp(rng.uniform_range(lr0, lr1));
        let cw = libm::round(libm::sqrt(target * aspect)) as usize;
        let ch = libm::round(libm::sqrt(target / aspect)) as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.below((h - ch + 1) as u64) as usize;
            let left = rng.below((w - cw + 1) as u64) as usize;
            return (top, left, ch, cw);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < policy.ratio.0 {
        ((libm::round(w as f64 / policy.ratio.0) as usize).min(h), w)
    } else if in_ratio > policy.ratio.1 {
        (h, (libm::round(h as f64 * policy.ratio.1) as usize).min(w))
    } else {
        (h, w)
    };
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Bilinear resize of the `(top, left, ch, cw)` window of a `[C, H, W]`
/// image to `[C, out_h, out_w]` (half-pixel centres, edge clamping).
pub fn resize_window(
    image: &Tensor,
    window: (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(dim_err!("expected [C, H, W], got {:?}", image.shape()));
    };
    let (top, left, ch, cw) = window;
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(dim_err!("crop window {window:?} outside {h}x{w}"));
    }
    let src = image.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    let sy = ch as f64 / out_h as f64;
    let sx = cw as f64 / out_w as f64;
    let coord = |o: usize, s: f64, n: usize| -> (usize, usize, f64) {
        let f = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = libm::floor(f) as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, f - i0 as f64)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, ch);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, cw);
            for k in 0..c {
                let at = |y: usize, x: usize| src[k * h * w + (top + y) * w + left + x] as f64;
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                    + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                out[k * out_h * out_w + oy * out_w + ox] = v as f32;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Mirrors a `[C, H, W]` image left-right and/or top-bottom.
pub fn flip(image: &Tensor, horizontal: bool, vertical: bool) -> Tensor {
    let [c, h, w] = *image.shape() else {
        panic!("flip expects [C, H, W]");
    };
    let src = image.data();
    let mut out = Tensor::zeros(image.shape()).expect("same shape");
    let dst = out.data_mut();
    for k in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                dst[k * h * w + y * w + x] = src[k * h * w + sy * w + sx];
            }
        }
    }
    out
}

/// Crop-resize to `out_side x out_side`, then horizontal flip with
/// `hflip_p`, then vertical flip with `vflip_p`.
pub fn augment(image: &Tensor, out_side: usize, policy: &AugmentPolicy, rng: &mut Rng) -> Result<Tensor> {
    let [_, h, w] = *image.shape() else {
        return Err(dim_err!("augment expects [C, H, W], got {:?}", image.shape()));
    };
    if h < MIN_AUGMENT_SIDE || w < MIN_AUGMENT_SIDE {
        return Err(Error::Input(alloc::format!(
            "image {h}x{w} is smaller than {MIN_AUGMENT_SIDE}x{MIN_AUGMENT_SIDE}"
        )));
    }
    let window = if policy.crop {
        sample_crop(h, w, policy, rng)
    } else {
        (0, 0, h, w)
    };
    let resized = if window == (0, 0, h, w) && h == out_side && w == out_side {
        image.clone()
    } else {
        resize_window(image, window, out_side, out_side)?
    };
    let hflip = rng.bernoulli(policy.hflip_p);
    let vflip = rng.bernoulli(policy.vflip_p);
    Ok(if hflip || vflip {
        flip(&resized, hflip, vflip)
    } else {
        resized
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[c, h, w], |i| (i % 251) as f32 / 251.0).unwrap()
    }

    #[test]
    fn output_is_square_at_requested_side() {
        let img = ramp(3, 60, 90);
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let out = augment(&img, 224, &AugmentPolicy::default(), &mut rng).unwrap();
            assert_eq!(out.shape(), &[3, 224, 224]);
        }
    }

    #[test]
    fn forced_flips_are_an_involution() {
        let img = ramp(3, 224, 224);
        let policy = AugmentPolicy {
            crop: false,
            hflip_p: 1.0,
            vflip_p: 1.0,
            ..Default::default()
        };
        let mut rng = Rng::new(2);
        let once = augment(&img, 224, &policy, &mut rng).unwrap();
        assert_ne!(once, img);
        let twice = augment(&once, 224, &policy, &mut rng).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let img = ramp(3, 64, 64);
        let a = augment(&img, 32, &AugmentPolicy::default(), &mut Rng::new(9)).unwrap();
        let b = augment(&img, 32, &AugmentPolicy::default(), &mut Rng::new(9)).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
    }

    #[test]
    fn small_images_rejected() {
        let img = ramp(3, 16, 64);
        assert!(matches!(
            augment(&img, 32, &AugmentPolicy::default(), &mut Rng::new(0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn crop_respects_area_bounds() {
        let mut rng = Rng::new(4);
        let p = AugmentPolicy::default();
        for _ in 0..200 {
            let (t, l, ch, cw) = sample_crop(100, 120, &p, &mut rng);
            assert!(t + ch <= 100 && l + cw <= 120);
            let frac = (ch * cw) as f64 / 12_000.0;
            assert!(frac > 0.18 && frac <= 1.0, "{frac}");
        }
    }
}
