use alloc::vec::Vec;

use super::config::DecoderConfig;
use super::mask::MaskPlan;
use crate::autograd::{Graph, Var};
use crate::backbone::{
    patchify, sincos_2d, Backbone, BackboneConfig, BlockParams, LayerAttention, LinearParams, NormParams,
};
use crate::error::{contract_err, dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Encoder plus the light decoder that reconstructs masked patches.
///
/// Parameter names: the encoder is unprefixed (`patch_embed.*`,
/// `blocks.*`, `norm.*`), decoder tensors start with `decoder.`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaeModel {
    pub encoder: Backbone,
    pub decoder_cfg: DecoderConfig,
    pub decoder_embed: LinearParams,
    pub mask_token: ParamId,
    pub decoder_pos: ParamId,
    pub decoder_blocks: Vec<BlockParams>,
    pub decoder_norm: NormParams,
    pub decoder_pred: LinearParams,
}

/// Node handles produced by [`MaeModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct MaeOutput {
    /// `[|masked|, patch*patch*channels]` pixel predictions, in `masked_idx` order.
    pub pred: Var,
    pub encoder_tokens: usize,
    pub decoder_tokens: usize,
}

impl MaeModel {
    pub fn new(cfg: BackboneConfig, decoder_cfg: DecoderConfig, store: &mut ParamStore, rng: &Rng) -> Result<Self> {
        decoder_cfg.validate(cfg.hidden)?;
        let encoder = Backbone::new(cfg, store, rng, "")?;
        let dh = decoder_cfg.hidden;
        let decoder_embed = LinearParams::new(store, rng, "decoder.embed", cfg.hidden, dh)?;
        let mask_token = store.add(
            "decoder.mask_token",
            Tensor::randn(&[dh], 0.02, &mut rng.split_str("decoder.mask_token"))?,
            true,
        )?;
        let decoder_pos = store.add("decoder.pos_embed", sincos_2d(dh, cfg.grid())?, false)?;
        let decoder_blocks = (0..decoder_cfg.layers)
            .map(|l| {
                BlockParams::new(
                    store,
                    rng,
                    &alloc::format!("decoder.blocks.{l}"),
                    dh,
                    decoder_cfg.mlp(),
                    1,
                )
            })
            .collect::<Result<_>>()?;
        let decoder_norm = NormParams::new(store, "decoder.norm", dh)?;
        let decoder_pred = LinearParams::new(store, rng, "decoder.pred", dh, cfg.patch_dim())?;
        Ok(Self {
            encoder,
            decoder_cfg,
            decoder_embed,
            mask_token,
            decoder_pos,
            decoder_blocks,
            decoder_norm,
            decoder_pred,
        })
    }

    pub fn cfg(&self) -> &BackboneConfig {
        &self.encoder.cfg
    }

    /// Patch embedding with position table for a `[C, H, W]` image node.
    pub fn patchify_embed<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, image: Var) -> Result<Var> {
        self.encoder.embed(g, b, image, None)
    }

    /// Encodes the visible tokens only, restores full length with the shared
    /// mask token, decodes, and predicts pixels of the masked patches.
    pub fn forward_tokens<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        tokens: Var,
        plan: &MaskPlan,
    ) -> Result<MaeOutput> {
        let n = g.shape(tokens)[0];
        if plan.total != n || plan.visible_idx.len() + plan.masked_idx.len() != n {
            return Err(contract_err!("mask plan over {} tokens applied to {n}", plan.total));
        }
        if plan.masked_idx.is_empty() {
            return Err(contract_err!("mask plan hides no tokens; nothing to reconstruct"));
        }
        if plan.visible_idx.is_empty() {
            return Err(contract_err!("mask plan leaves no visible tokens"));
        }
        let visible = g.select_rows(tokens, &plan.visible_idx)?;
        let encoded = self.encoder.forward(g, b, visible, &[], None)?.tokens;

        let dec = self.decoder_embed.forward(g, b, encoded)?;
        let masks = g.repeat_rows(b[self.mask_token], plan.masked_idx.len())?;
        let joined = g.concat_rows(dec, masks)?;
        // undo the visible-then-masked ordering
        let dh = self.decoder_cfg.hidden;
        let mut position = alloc::vec![0usize; n];
        for (k, &t) in plan.visible_idx.iter().chain(&plan.masked_idx).enumerate() {
            position[t] = k;
        }
        let idx = position
            .iter()
            .flat_map(|&p| (0..dh).map(move |j| (p * dh + j) as u32))
            .collect();
        let full = g.gather(joined, idx, &[n, dh])?;
        let mut x = g.add(full, b[self.decoder_pos])?;
        for blk in &self.decoder_blocks {
            x = blk.forward(g, b, x, self.decoder_cfg.heads, LayerAttention::Global, None)?;
        }
        let x = self.decoder_norm.forward(g, b, x)?;
        let masked = g.select_rows(x, &plan.masked_idx)?;
        let pred = self.decoder_pred.forward(g, b, masked)?;
        Ok(MaeOutput {
            pred,
            encoder_tokens: plan.visible_idx.len(),
            decoder_tokens: n,
        })
    }

    /// Image node to masked-patch predictions.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, image: Var, plan: &MaskPlan) -> Result<MaeOutput> {
        let tokens = self.patchify_embed(g, b, image)?;
        self.forward_tokens(g, b, tokens, plan)
    }
}

/// Mean squared error over the pixels of masked patches only. `target` is
/// the raw `[C, H, W]` image node (values in `[0, 1]`, no per-patch
/// normalization).
pub fn mae_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, plan: &MaskPlan, patch: usize) -> Result<Var> {
    let rows = patchify(g, target, patch)?;
    if g.shape(rows)[0] != plan.total {
        return Err(contract_err!(
            "target has {} patches, plan covers {}",
            g.shape(rows)[0],
            plan.total
        ));
    }
    let expected = [plan.masked_idx.len(), g.shape(rows)[1]];
    if g.shape(pred) != expected {
        return Err(dim_err!(
            "prediction {:?} does not cover the masked patches {expected:?}",
            g.shape(pred)
        ));
    }
    let tgt = g.select_rows(rows, &plan.masked_idx)?;
    g.mse(pred, tgt)
}
