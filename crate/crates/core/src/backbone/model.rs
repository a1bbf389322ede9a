use alloc::format;
use alloc::vec::Vec;

use super::config::BackboneConfig;
use super::patch::patchify;
use super::posembed::sincos_2d;
use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LN_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    /// Xavier-uniform weight `[fan_in, fan_out]`, zero bias.
    pub fn new(store: &mut ParamStore, rng: &Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let wname = format!("{name}.weight");
        let bound = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
        let w = Tensor::uniform(&[fan_in, fan_out], bound, &mut rng.split_str(&wname))?;
        Ok(Self {
            weight: store.add(wname, w, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])?, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.linear(x, b[self.weight], b[self.bias])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), Tensor::ones(&[dim])?, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])?, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, b[self.weight], b[self.bias], LN_EPS)
    }
}

/// One attention + MLP branch pair, each with its own pre-norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchParams {
    pub attn_norm: NormParams,
    pub qkv: LinearParams,
    pub proj: LinearParams,
    pub mlp_norm: NormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

/// Which tokens may attend to each other in a layer.
#[derive(Debug, Clone, Copy)]
pub enum LayerAttention<'a> {
    Global,
    /// Attention restricted to each listed token group.
    Groups(&'a [Vec<usize>]),
}

/// Stochastic depth applied independently to every branch output.
#[derive(Debug)]
pub struct DropPath<'r> {
    pub rate: f32,
    pub rng: &'r mut Rng,
}

impl DropPath<'_> {
    /// Drops (returns `None`) or rescales a branch output by `1/(1-rate)`.
    pub fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, y: Var) -> Result<Option<Var>> {
        if self.rate <= 0.0 {
            return Ok(Some(y));
        }
        if self.rng.bernoulli(self.rate as f64) {
            return Ok(None);
        }
        g.scale(y, T::from_f64(1.0 / (1.0 - self.rate as f64))).map(Some)
    }
}

/// Multi-head scaled dot-product attention over packed `qkv: [n, 3h]`.
pub fn attention<T: Scalar>(g: &mut Graph<T>, qkv: Var, heads: usize) -> Result<Var> {
    let (n, three_h) = match g.shape(qkv) {
        [n, c] => (*n, *c),
        s => return Err(dim_err!("attention expects [n, 3h], got {s:?}")),
    };
    if three_h % 3 != 0 || (three_h / 3) % heads != 0 {
        return Err(dim_err!("qkv width {three_h} does not split into {heads} heads"));
    }
    let h = three_h / 3;
    let d = h / heads;
    let scale = T::from_f64(1.0 / libm::sqrt(d as f64));
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = g.slice_cols(qkv, i * d, d, false)?;
        let kt = g.slice_cols(qkv, h + i * d, d, true)?;
        let v = g.slice_cols(qkv, 2 * h + i * d, d, false)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, scale)?;
        let p = g.softmax(s)?;
        outs.push(g.matmul(p, v)?);
    }
    if heads == 1 {
        return Ok(outs[0]);
    }
    // [heads, n, d] -> [n, heads*d]
    let stacked = g.concat(&outs, &[heads, n, d])?;
    let idx = (0..n)
        .flat_map(|t| (0..heads).flat_map(move |i| (0..d).map(move |j| (i * n * d + t * d + j) as u32)))
        .collect();
    g.gather(stacked, idx, &[n, h])
}

impl BranchParams {
    fn new(store: &mut ParamStore, rng: &Rng, name: &str, hidden: usize, mlp: usize) -> Result<Self> {
        Ok(Self {
            attn_norm: NormParams::new(store, &format!("{name}.norm1"), hidden)?,
            qkv: LinearParams::new(store, rng, &format!("{name}.attn.qkv"), hidden, 3 * hidden)?,
            proj: LinearParams::new(store, rng, &format!("{name}.attn.proj"), hidden, hidden)?,
            mlp_norm: NormParams::new(store, &format!("{name}.norm2"), hidden)?,
            fc1: LinearParams::new(store, rng, &format!("{name}.mlp.fc1"), hidden, mlp)?,
            fc2: LinearParams::new(store, rng, &format!("{name}.mlp.fc2"), mlp, hidden)?,
        })
    }

    pub fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        heads: usize,
        mode: LayerAttention<'_>,
    ) -> Result<Var> {
        let xn = self.attn_norm.forward(g, b, x)?;
        let qkv = self.qkv.forward(g, b, xn)?;
        let out = match mode {
            LayerAttention::Global => attention(g, qkv, heads)?,
            LayerAttention::Groups(groups) => grouped_attention(g, qkv, heads, groups)?,
        };
        self.proj.forward(g, b, out)
    }

    pub fn feed_forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let xn = self.mlp_norm.forward(g, b, x)?;
        let hdn = self.fc1.forward(g, b, xn)?;
        let hdn = g.gelu(hdn)?;
        self.fc2.forward(g, b, hdn)
    }
}

/// Attention evaluated separately inside each token group; groups must
/// partition the token rows.
fn grouped_attention<T: Scalar>(g: &mut Graph<T>, qkv: Var, heads: usize, groups: &[Vec<usize>]) -> Result<Var> {
    let (n, three_h) = (g.shape(qkv)[0], g.shape(qkv)[1]);
    let h = three_h / 3;
    let mut outs = Vec::with_capacity(groups.len());
    let mut position = alloc::vec![u32::MAX; n];
    let mut offset = 0usize;
    for grp in groups {
        for (k, &t) in grp.iter().enumerate() {
            if t >= n || position[t] != u32::MAX {
                return Err(dim_err!("token groups must partition {n} tokens (bad token {t})"));
            }
            position[t] = (offset + k) as u32;
        }
        offset += grp.len();
        let sub = g.select_rows(qkv, grp)?;
        outs.push(attention(g, sub, heads)?);
    }
    if offset != n {
        return Err(dim_err!("token groups cover {offset} of {n} tokens"));
    }
    let stacked = g.concat(&outs, &[n, h])?;
    let idx = position
        .iter()
        .flat_map(|&p| (0..h).map(move |j| p * h as u32 + j as u32))
        .collect();
    g.gather(stacked, idx, &[n, h])
}

/// `parallelism` branch pairs composing one sequential layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub branches: Vec<BranchParams>,
}

impl BlockParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &Rng,
        name: &str,
        hidden: usize,
        mlp: usize,
        parallelism: usize,
    ) -> Result<Self> {
        let branches = (0..parallelism)
            .map(|c| BranchParams::new(store, rng, &format!("{name}.branch{c}"), hidden, mlp))
            .collect::<Result<_>>()?;
        Ok(Self { branches })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        heads: usize,
        mode: LayerAttention<'_>,
        mut drop: Option<&mut DropPath<'_>>,
    ) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for br in &self.branches {
            let y = br.attend(g, b, x, heads, mode)?;
            let y = match drop.as_deref_mut() {
                Some(d) => d.apply(g, y)?,
                None => Some(y),
            };
            if let Some(y) = y {
                acc = Some(match acc {
                    Some(a) => g.add(a, y)?,
                    None => y,
                });
            }
        }
        let x = match acc {
            Some(a) => g.add(x, a)?,
            None => x,
        };
        let mut acc: Option<Var> = None;
        for br in &self.branches {
            let y = br.feed_forward(g, b, x)?;
            let y = match drop.as_deref_mut() {
                Some(d) => d.apply(g, y)?,
                None => Some(y),
            };
            if let Some(y) = y {
                acc = Some(match acc {
                    Some(a) => g.add(a, y)?,
                    None => y,
                });
            }
        }
        match acc {
            Some(a) => g.add(x, a),
            None => Ok(x),
        }
    }
}

/// Encoder parameters registered in a [`ParamStore`] under `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub patch_embed: LinearParams,
    /// Fixed sin-cos table at the configured grid (`trainable = false`).
    pub pos_embed: ParamId,
    pub blocks: Vec<BlockParams>,
    pub norm: NormParams,
}

/// Output of [`Backbone::forward`]: the final-norm tokens and every layer's
/// (pre-norm) output.
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub tokens: Var,
    pub layers: Vec<Var>,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, store: &mut ParamStore, rng: &Rng, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let patch_embed = LinearParams::new(store, rng, &format!("{prefix}patch_embed"), cfg.patch_dim(), cfg.hidden)?;
        let pos_embed = store.add(format!("{prefix}pos_embed"), sincos_2d(cfg.hidden, cfg.grid())?, false)?;
        let blocks = (0..cfg.layers)
            .map(|l| {
                BlockParams::new(
                    store,
                    rng,
                    &format!("{prefix}blocks.{l}"),
                    cfg.hidden,
                    cfg.mlp,
                    cfg.parallelism,
                )
            })
            .collect::<Result<_>>()?;
        let norm = NormParams::new(store, &format!("{prefix}norm"), cfg.hidden)?;
        Ok(Self {
            cfg,
            patch_embed,
            pos_embed,
            blocks,
            norm,
        })
    }

    /// Patchify + linear projection + position table: `[C, H, W]` -> `[N, hidden]`.
    /// `pos` overrides the stored table (e.g. an interpolated one).
    pub fn embed<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, image: Var, pos: Option<Var>) -> Result<Var> {
        let patches = patchify(g, image, self.cfg.patch)?;
        let tokens = self.patch_embed.forward(g, b, patches)?;
        let pos = pos.unwrap_or(b[self.pos_embed]);
        if g.shape(pos) != g.shape(tokens) {
            return Err(dim_err!(
                "position table {:?} vs tokens {:?}",
                g.shape(pos),
                g.shape(tokens)
            ));
        }
        g.add(tokens, pos)
    }

    /// Runs every layer over already-embedded `tokens: [n, hidden]`.
    /// `schedule` gives per-layer attention (empty slice: all global).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        tokens: Var,
        schedule: &[LayerAttention<'_>],
        mut drop: Option<&mut DropPath<'_>>,
    ) -> Result<BackboneOutput> {
        match g.shape(tokens) {
            [_, h] if *h == self.cfg.hidden => {}
            s => return Err(dim_err!("tokens {s:?} do not match hidden {}", self.cfg.hidden)),
        }
        if !schedule.is_empty() && schedule.len() != self.blocks.len() {
            return Err(dim_err!(
                "schedule has {} entries for {} layers",
                schedule.len(),
                self.blocks.len()
            ));
        }
        let mut x = tokens;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (l, blk) in self.blocks.iter().enumerate() {
            let mode = schedule.get(l).copied().unwrap_or(LayerAttention::Global);
            x = blk.forward(g, b, x, self.cfg.heads, mode, drop.as_deref_mut())?;
            layers.push(x);
        }
        let out = self.norm.forward(g, b, x)?;
        Ok(BackboneOutput { tokens: out, layers })
    }
}
