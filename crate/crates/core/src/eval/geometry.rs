use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{contract_err, Result};

/// Oriented rectangle `(cx, cy, w, h, theta)` in pixels and radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub theta: f32,
    pub class_id: u32,
    /// Detection confidence; ground truth carries 1.
    pub score: f32,
}

/// Wraps an angle into `[-pi/2, pi/2)`.
fn wrap_half_pi(theta: f64) -> f64 {
    let r = libm::fmod(theta + FRAC_PI_2, PI);
    let t = if r < 0.0 { r + PI } else { r } - FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

impl RotatedBox {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32, theta: f32, class_id: u32) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            theta,
            class_id,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f32) -> Self {
        self.score = score;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.cx, self.cy, self.w, self.h, self.theta];
        if vals.iter().any(|v| !v.is_finite()) || self.w <= 0.0 || self.h <= 0.0 {
            return Err(contract_err!("degenerate box {self:?}"));
        }
        Ok(())
    }

    /// Same rectangle with `w >= h` and `theta` in `[-pi/2, pi/2)`.
    pub fn canonical(&self) -> Self {
        let (w, h, t) = if self.w >= self.h {
            (self.w, self.h, self.theta as f64)
        } else {
            (self.h, self.w, self.theta as f64 + FRAC_PI_2)
        };
        Self {
            w,
            h,
            theta: wrap_half_pi(t) as f32,
            ..*self
        }
    }

    pub fn area(&self) -> f64 {
        self.w as f64 * self.h as f64
    }

    /// Corners in counter-clockwise order (for a y-up frame).
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = libm::sincos(self.theta as f64);
        let (hw, hh) = (self.w as f64 / 2.0, self.h as f64 / 2.0);
        let (cx, cy) = (self.cx as f64, self.cy as f64);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
    }

    /// Axis-aligned bounds `(xmin, ymin, xmax, ymax)` of the corners.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.corners();
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
        b
    }

    /// Whether `(x, y)` lies inside the rectangle.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = libm::sincos(self.theta as f64);
        let (dx, dy) = (x - self.cx as f64, y - self.cy as f64);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.w as f64 / 2.0 && v.abs() <= self.h as f64 / 2.0
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() / 2.0
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = core::mem::take(&mut out);
        let inside = |p: (f64, f64)| cross(e0, e1, p) >= 0.0;
        let intersect = |p: (f64, f64), q: (f64, f64)| {
            let (dp, dq) = (cross(e0, e1, p), cross(e0, e1, q));
            let t = dp / (dp - dq);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        for j in 0..input.len() {
            let (cur, prev) = (input[j], input[(j + input.len() - 1) % input.len()]);
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(intersect(prev, cur)),
                (false, true) => {
                    out.push(intersect(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Intersection over union of two oriented rectangles.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> Result<f32> {
    a.validate()?;
    b.validate()?;
    let (a, b) = (a.canonical(), b.canonical());
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0) as f32)
}
