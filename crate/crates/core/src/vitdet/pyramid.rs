//! Scale blocks and the four-level feature pyramid.
//!
//! Each block resamples a `[hidden, g, g]` map (kind 1: x4 via two transposed
//! convolutions, kind 2: x2, kind 3: identity, kind 4: 2x2 max pooling) and
//! then projects it to the pyramid width with a 1x1 convolution followed by
//! a layer norm over channels at every position.

use alloc::format;

use crate::autograd::{Graph, Var};
use crate::backbone::NormParams;
use crate::error::{contract_err, dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_PYRAMID_WIDTH: usize = 256;
const MAP_NORM_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Detection,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvT {
    weight: ParamId,
    bias: ParamId,
}

impl ConvT {
    fn new(store: &mut ParamStore, rng: &Rng, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let wname = format!("{name}.weight");
        let bound = libm::sqrtf(6.0 / ((cin + cout) * 4) as f32);
        let w = Tensor::uniform(&[cin, cout, 2, 2], bound, &mut rng.split_str(&wname))?;
        Ok(Self {
            weight: store.add(wname, w, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])?, true)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let y = g.conv_transpose2x2(x, b[self.weight])?;
        g.add_col_vec(y, b[self.bias])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resample {
    Up4 {
        first: ConvT,
        norm_w: ParamId,
        norm_b: ParamId,
        second: ConvT,
    },
    Up2(ConvT),
    Identity,
    Down2,
}

/// One scale block: the resampling stack plus a 1x1 output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleBlock {
    pub kind: u8,
    resample: Resample,
    /// `[width, channels]` 1x1 convolution weight.
    proj_w: ParamId,
    proj_b: ParamId,
    out_norm: NormParams,
}

impl ScaleBlock {
    pub fn new(kind: u8, store: &mut ParamStore, rng: &Rng, name: &str, hidden: usize, width: usize) -> Result<Self> {
        if !hidden.is_multiple_of(4) {
            return Err(dim_err!("scale blocks need hidden divisible by 4, got {hidden}"));
        }
        let (resample, channels) = match kind {
            1 => (
                Resample::Up4 {
                    first: ConvT::new(store, rng, &format!("{name}.up1"), hidden, hidden / 2)?,
                    norm_w: store.add(format!("{name}.norm.weight"), Tensor::ones(&[hidden / 2])?, true)?,
                    norm_b: store.add(format!("{name}.norm.bias"), Tensor::zeros(&[hidden / 2])?, true)?,
                    second: ConvT::new(store, rng, &format!("{name}.up2"), hidden / 2, hidden / 4)?,
                },
                hidden / 4,
            ),
            2 => (
                Resample::Up2(ConvT::new(store, rng, &format!("{name}.up1"), hidden, hidden / 2)?),
                hidden / 2,
            ),
            3 => (Resample::Identity, hidden),
            4 => (Resample::Down2, hidden),
            k => return Err(contract_err!("scale block kind must be 1..=4, got {k}")),
        };
        let wname = format!("{name}.proj.weight");
        let bound = libm::sqrtf(6.0 / (channels + width) as f32);
        let w = Tensor::uniform(&[width, channels], bound, &mut rng.split_str(&wname))?;
        Ok(Self {
            kind,
            resample,
            proj_w: store.add(wname, w, true)?,
            proj_b: store.add(format!("{name}.proj.bias"), Tensor::zeros(&[width])?, true)?,
            out_norm: NormParams::new(store, &format!("{name}.out_norm"), width)?,
        })
    }

    /// The resampling stack alone, on a `[C, H, W]` map.
    pub fn resample<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        match self.resample {
            Resample::Up4 {
                first,
                norm_w,
                norm_b,
                second,
            } => {
                let y = first.forward(g, b, x)?;
                let (c, h, w) = (g.shape(y)[0], g.shape(y)[1], g.shape(y)[2]);
                // per-channel normalization over spatial positions
                let flat = g.reshape(y, &[c, h * w])?;
                let n = g.normalize(flat, MAP_NORM_EPS)?;
                let n = g.mul_col_vec(n, b[norm_w])?;
                let n = g.add_col_vec(n, b[norm_b])?;
                let n = g.reshape(n, &[c, h, w])?;
                let a = g.gelu(n)?;
                second.forward(g, b, a)
            }
            Resample::Up2(conv) => conv.forward(g, b, x),
            Resample::Identity => Ok(x),
            Resample::Down2 => g.max_pool2x2(x),
        }
    }

    /// 1x1 projection of a `[C, H, W]` map to `[width, H, W]`, normalized
    /// over channels.
    pub fn project<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = match g.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(dim_err!("scale block expects [C, H, W], got {s:?}")),
        };
        let width = g.shape(b[self.proj_w])[0];
        let flat = g.reshape(x, &[c, h * w])?;
        let y = g.matmul(b[self.proj_w], flat)?;
        let y = g.add_col_vec(y, b[self.proj_b])?;
        let rows = g.transpose(y)?;
        let rows = self.out_norm.forward(g, b, rows)?;
        let y = g.transpose(rows)?;
        g.reshape(y, &[width, h, w])
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let y = self.resample(g, b, x)?;
        self.project(g, b, y)
    }
}

/// Maps at spatial ratios 4, 2, 1 and 0.5 of the patch grid, each `[width, s, s]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub p4: Var,
    pub p2: Var,
    pub p1: Var,
    pub p05: Var,
}

impl FeaturePyramid {
    pub fn levels(&self) -> [Var; 4] {
        [self.p4, self.p2, self.p1, self.p05]
    }
}

/// The four scale blocks (kinds 1..=4) registered as `pyramid.s{k}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pyramid {
    pub blocks: [ScaleBlock; 4],
    pub width: usize,
}

impl Pyramid {
    pub fn new(store: &mut ParamStore, rng: &Rng, hidden: usize, width: usize) -> Result<Self> {
        let mk =
            |k: u8, store: &mut ParamStore| ScaleBlock::new(k, store, rng, &format!("pyramid.s{k}"), hidden, width);
        Ok(Self {
            blocks: [mk(1, store)?, mk(2, store)?, mk(3, store)?, mk(4, store)?],
            width,
        })
    }

    /// `taps` are `[hidden, g, g]` maps after layers 3, 6, 9 and 12 (any of the
    /// first three may be `None` for detection).
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        task: Task,
        taps: &[Option<Var>; 4],
    ) -> Result<FeaturePyramid> {
        let missing = |i: usize| contract_err!("pyramid needs the tap after layer {}", 3 * (i + 1));
        let sources: [Var; 4] = match task {
            Task::Detection => {
                let last = taps[3].ok_or_else(|| missing(3))?;
                [last; 4]
            }
            Task::Segmentation => {
                let mut s = [taps[3].ok_or_else(|| missing(3))?; 4];
                for (i, t) in taps.iter().enumerate() {
                    s[i] = t.ok_or_else(|| missing(i))?;
                }
                s
            }
        };
        let [p4, p2, p1, p05] = [
            self.blocks[0].forward(g, b, sources[0])?,
            self.blocks[1].forward(g, b, sources[1])?,
            self.blocks[2].forward(g, b, sources[2])?,
            self.blocks[3].forward(g, b, sources[3])?,
        ];
        Ok(FeaturePyramid { p4, p2, p1, p05 })
    }
}

/// `[g*g, h]` tokens -> `[h, g, g]` map.
pub fn tokens_to_map<T: Scalar>(g: &mut Graph<T>, tokens: Var, grid: usize) -> Result<Var> {
    let h = match g.shape(tokens) {
        [n, h] if *n == grid * grid => *h,
        s => return Err(dim_err!("tokens {s:?} do not form a {grid}x{grid} grid")),
    };
    let t = g.transpose(tokens)?;
    g.reshape(t, &[h, grid, grid])
}
