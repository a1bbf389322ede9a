use alloc::vec::Vec;

use super::interp::interpolate_pos;
use super::pyramid::{tokens_to_map, FeaturePyramid, Pyramid, Task};
use super::schedule::{AttentionSchedule, TAP_LAYERS};
use super::window::window_groups;
use crate::autograd::{Graph, Var};
use crate::backbone::{Backbone, BackboneConfig, DropPath, LayerAttention};
use crate::error::{dim_err, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// A 12-layer backbone run with the local/global attention schedule, plus
/// the scale-block pyramid.
///
/// Backbone tensors keep their pretraining names so a pretraining
/// checkpoint loads directly; new tensors live under `pyramid.`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptedModel {
    pub backbone: Backbone,
    pub schedule: AttentionSchedule,
    pub pyramid: Pyramid,
}

#[derive(Debug, Clone)]
pub struct AdaptedOutput {
    pub grid: usize,
    /// Final-norm tokens `[g*g, hidden]`.
    pub tokens: Var,
    /// Every layer's output tokens.
    pub layers: Vec<Var>,
    /// `[hidden, g, g]` maps after layers 3, 6, 9 and 12.
    pub taps: [Var; 4],
}

impl AdaptedModel {
    pub fn new(
        cfg: BackboneConfig,
        schedule: AttentionSchedule,
        pyramid_width: usize,
        store: &mut ParamStore,
        rng: &Rng,
    ) -> Result<Self> {
        AttentionSchedule::check_depth(cfg.layers)?;
        schedule.validate()?;
        let backbone = Backbone::new(cfg, store, rng, "")?;
        let pyramid = Pyramid::new(store, rng, cfg.hidden, pyramid_width)?;
        Ok(Self {
            backbone,
            schedule,
            pyramid,
        })
    }

    pub fn cfg(&self) -> &BackboneConfig {
        &self.backbone.cfg
    }

    /// Patch embedding for a square `[C, S, S]` image; the position table is
    /// resized when `S / patch` differs from the pretraining grid.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, image: Var) -> Result<(Var, usize)> {
        let cfg = self.cfg();
        let side = match g.shape(image) {
            [c, h, w] if *c == cfg.in_channels && h == w && h % cfg.patch == 0 => *h,
            s => {
                return Err(dim_err!(
                    "expected a square [{}, S, S] image divisible by {}, got {s:?}",
                    cfg.in_channels,
                    cfg.patch
                ))
            }
        };
        let grid = side / cfg.patch;
        let pos = if grid == cfg.grid() {
            None
        } else {
            let table = g.to_tensor(b[self.backbone.pos_embed]);
            Some(g.constant(&interpolate_pos(&table, grid)?))
        };
        Ok((self.backbone.embed(g, b, image, pos)?, grid))
    }

    /// Runs the scheduled layers over embedded tokens of a `grid x grid` image.
    pub fn forward_tokens<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        tokens: Var,
        grid: usize,
        drop: Option<&mut DropPath<'_>>,
    ) -> Result<AdaptedOutput> {
        if g.shape(tokens).first() != Some(&(grid * grid)) {
            return Err(dim_err!(
                "tokens {:?} do not form a {grid}x{grid} grid",
                g.shape(tokens)
            ));
        }
        let groups = window_groups(grid, self.schedule.window);
        let modes: Vec<LayerAttention<'_>> = (1..=self.backbone.blocks.len())
            .map(|l| {
                if self.schedule.is_local(l) {
                    LayerAttention::Groups(&groups)
                } else {
                    LayerAttention::Global
                }
            })
            .collect();
        let out = self.backbone.forward(g, b, tokens, &modes, drop)?;
        let mut taps = [out.tokens; 4];
        for (t, &l) in taps.iter_mut().zip(TAP_LAYERS.iter()) {
            *t = tokens_to_map(g, out.layers[l - 1], grid)?;
        }
        Ok(AdaptedOutput {
            grid,
            tokens: out.tokens,
            layers: out.layers,
            taps,
        })
    }

    pub fn forward_image<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: Var,
        drop: Option<&mut DropPath<'_>>,
    ) -> Result<AdaptedOutput> {
        let (tokens, grid) = self.embed(g, b, image)?;
        self.forward_tokens(g, b, tokens, grid, drop)
    }

    pub fn build_pyramid<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        task: Task,
        out: &AdaptedOutput,
    ) -> Result<FeaturePyramid> {
        let taps = match task {
            Task::Detection => [None, None, None, Some(out.taps[3])],
            Task::Segmentation => out.taps.map(Some),
        };
        self.pyramid.build(g, b, task, &taps)
    }
}
