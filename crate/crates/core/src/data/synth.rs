use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{contract_err, Error, Result};
use crate::eval::{clip_polygon, polygon_area, RotatedBox, SegMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MIN_SCENE_SIDE: usize = 64;

/// Object colours, one per class.
pub const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.20, 0.30, 0.90],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
    [0.98, 0.55, 0.10],
    [0.55, 0.35, 0.15],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub num_objects: usize,
    pub classes: usize,
    /// Object long side as a fraction of the scene side.
    pub min_extent: f64,
    pub max_extent: f64,
    pub placement_attempts: usize,
}

impl SceneSpec {
    pub fn new(size: usize, num_objects: usize, classes: usize) -> Self {
        Self {
            size,
            num_objects,
            classes,
            min_extent: 0.15,
            max_extent: 0.35,
            placement_attempts: 200,
        }
    }
}

/// One rendered object: its oriented box and whether it is drawn as the
/// inscribed ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub bbox: RotatedBox,
    pub shape: Shape,
}

impl SceneObject {
    /// Whether `(x, y)` lies inside the drawn shape.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let b = &self.bbox;
        let (s, c) = libm::sincos(b.theta as f64);
        let (dx, dy) = (x - b.cx as f64, y - b.cy as f64);
        let u = (dx * c + dy * s) / (b.w as f64 / 2.0);
        let v = (-dx * s + dy * c) / (b.h as f64 / 2.0);
        match self.shape {
            Shape::Rectangle => u.abs() <= 1.0 && v.abs() <= 1.0,
            Shape::Ellipse => u * u + v * v <= 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        let a = self.bbox.area();
        match self.shape {
            Shape::Rectangle => a,
            Shape::Ellipse => a * PI / 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub boxes: Vec<RotatedBox>,
    pub objects: Vec<SceneObject>,
    /// Background is 0, class `k` is `k + 1`.
    pub mask: Option<SegMap>,
    pub id: String,
}

/// Renders non-overlapping rectangles and ellipses of per-class colours on
/// a smoothly varying grey background with pixel noise.
///
/// Pixels are sampled at their centres. Objects are kept fully inside the
/// image and their boxes never overlap; a scene
/// that cannot be placed that way is a generation error.
pub fn synth_scene(spec: &SceneSpec, rng: &Rng, id: &str) -> Result<SceneSample> {
    let n = spec.size;
    if n < MIN_SCENE_SIDE {
        return Err(contract_err!("scene side must be >= {MIN_SCENE_SIDE}, got {n}"));
    }
    if spec.classes == 0 || spec.classes > PALETTE.len() {
        return Err(contract_err!(
            "classes must be in 1..={}, got {}",
            PALETTE.len(),
            spec.classes
        ));
    }
    if !(0.0 < spec.min_extent && spec.min_extent <= spec.max_extent && spec.max_extent < 1.0) {
        return Err(contract_err!("object extents must satisfy 0 < min <= max < 1"));
    }
    let side = n as f64;
    let mut place_rng = rng.split_str("place");
    let mut objects: Vec<SceneObject> = Vec::with_capacity(spec.num_objects);
    for k in 0..spec.num_objects {
        let mut placed = None;
        for _ in 0..spec.placement_attempts {
            let long = place_rng.uniform_range(spec.min_extent, spec.max_extent) * side;
            let short = long * place_rng.uniform_range(0.5, 1.0);
            let theta = place_rng.uniform_range(-FRAC_PI_2, FRAC_PI_2);
            let class_id = place_rng.below(spec.classes as u64) as u32;
            let shape = if place_rng.bernoulli(0.5) {
                Shape::Rectangle
            } else {
                Shape::Ellipse
            };
            let (sn, cs) = libm::sincos(theta);
            let ex = (long * cs.abs() + short * sn.abs()) / 2.0;
            let ey = (long * sn.abs() + short * cs.abs()) / 2.0;
            if 2.0 * ex >= side || 2.0 * ey >= side {
                continue;
            }
            let cx = place_rng.uniform_range(ex, side - ex);
            let cy = place_rng.uniform_range(ey, side - ey);
            let cand = RotatedBox::new(cx as f32, cy as f32, long as f32, short as f32, theta as f32, class_id);
            let clear = objects
                .iter()
                .all(|o| polygon_area(&clip_polygon(&cand.corners(), &o.bbox.corners())) == 0.0);
            if clear {
                placed = Some(SceneObject { bbox: cand, shape });
                break;
            }
        }
        match placed {
            Some(o) => objects.push(o),
            None => {
                return Err(Error::Generation(format!(
                    "could not place object {k} of {} in a {n}x{n} scene",
                    spec.num_objects
                )))
            }
        }
    }

    let mut tex = rng.split_str("texture");
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let ang = tex.uniform_range(0.0, 2.0 * PI);
            let freq = tex.uniform_range(1.0, 4.0) * 2.0 * PI / side;
            (
                libm::cos(ang) * freq,
                libm::sin(ang) * freq,
                tex.uniform_range(0.0, 2.0 * PI),
            )
        })
        .collect();
    let mut image = vec![0.0f32; 3 * n * n];
    let mut labels = vec![0u32; n * n];
    let mut noise = rng.split_str("noise");
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let p = y * n + x;
            let grain = (noise.uniform_f64() - 0.5) * 0.06;
            let obj = objects.iter().find(|o| o.contains(px, py));
            let rgb = match obj {
                Some(o) => {
                    labels[p] = o.bbox.class_id + 1;
                    PALETTE[o.bbox.class_id as usize].map(|c| c as f64 + grain)
                }
                None => {
                    let wave: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph)| libm::sin(fx * px + fy * py + ph))
                        .sum();
                    let v = 0.45 + 0.08 * wave + grain;
                    [v, v * 0.97, v * 0.92]
                }
            };
            for (c, v) in rgb.iter().enumerate() {
                image[c * n * n + p] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(SceneSample {
        image: Tensor::new(&[3, n, n], image)?,
        boxes: objects.iter().map(|o| o.bbox).collect(),
        objects,
        mask: Some(SegMap::new(n, n, labels, None)?),
        id: id.into(),
    })
}
