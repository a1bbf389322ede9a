//! The `ViT-(A)(B)x(C)` backbone family.
//!
//! A model name encodes the width letter (A), the number of sequential
//! layers (B) and the number of parallel attention/MLP branch pairs per
//! layer (C). Within a layer every branch owns its own pre-norm; all
//! attention branches are summed into the residual stream before any MLP
//! branch runs:
//!
//! ```text
//! x <- x + sum_i Attn_i(LN_i(x))
//! x <- x + sum_i MLP_i(LN'_i(x))
//! ```
//!
//! Positions use a fixed 2-D sin-cos table and there is no class token.

mod config;
mod cost;
mod model;
mod patch;
mod posembed;

pub use config::{parse_model_name, BackboneConfig, SizeLetter, SIZE_LETTERS};
pub use cost::{count_params, estimate_flops, estimate_memory, CostReport, Dtype, MemoryEstimate, ParamScope};
pub use model::BackboneOutput;
pub use model::{
    attention, Backbone, BlockParams, BranchParams, DropPath, LayerAttention, LinearParams, NormParams, LN_EPS,
};
pub use patch::{patchify, patchify_indices, patchify_tensor, unpatchify_tensor};
pub use posembed::sincos_2d;
