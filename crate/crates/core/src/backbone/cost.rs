//! Closed-form parameter, FLOP and memory accounting.
//!
//! Parameters (`h` hidden, `m` MLP width, `p` patch, `c` channels, `N` tokens):
//!
//! ```text
//! embed  = p*p*c*h + h            position table = N*h
//! branch = 4h^2 + 4h + 2hm + h + m + 4h    (qkv, proj, fc1, fc2, two norms)
//! total  = embed + N*h + layers*parallelism*branch + 2h
//! ```
//!
//! FLOPs count one multiply-accumulate as 2 and ignore softmax, biases and
//! the branch norms. For `t` tokens:
//!
//! ```text
//! branch = 2t(4h^2 + 2hm) + 2(2t^2 h)      projections + scores/apply
//! embed  = 2t(p*p*c*h)                     final norm = 2th
//! ```
//!
//! Both depend on depth only through `layers * parallelism`, so e.g.
//! 12 layers x 1 and 6 layers x 2 agree exactly.
//!
//! Memory is an estimate only: fp32 master weights, gradients in the compute
//! dtype, two fp32 Adam moments, and activations in the compute dtype. Per
//! branch the stored activations are `t(8h + 2m) + heads*t^2` elements
//! (norm outputs, qkv, attention probabilities, pre/post projection, MLP
//! hidden before/after GELU, MLP output) and every layer also keeps its two
//! residual-stage inputs (`2th`). With activation checkpointing only each
//! layer's input (`th`) is kept plus one layer's full set for recomputation.

use alloc::string::String;

use super::config::BackboneConfig;
use crate::mae::DecoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    Encoder,
    EncoderWithMaeDecoder(DecoderConfig),
}

fn branch_params(h: u64, m: u64) -> u64 {
    4 * h * h + 4 * h + 2 * h * m + h + m + 4 * h
}

pub fn count_params(cfg: &BackboneConfig, scope: ParamScope) -> u64 {
    let h = cfg.hidden as u64;
    let m = cfg.mlp as u64;
    let n = cfg.tokens() as u64;
    let pd = cfg.patch_dim() as u64;
    let encoder = pd * h + h + n * h + (cfg.layers * cfg.parallelism) as u64 * branch_params(h, m) + 2 * h;
    match scope {
        ParamScope::Encoder => encoder,
        ParamScope::EncoderWithMaeDecoder(d) => {
            let dh = d.hidden as u64;
            let decoder = h * dh + dh // decoder_embed
                + dh // mask token
                + n * dh // decoder position table
                + d.layers as u64 * branch_params(dh, d.mlp() as u64)
                + 2 * dh // decoder norm
                + dh * pd + pd; // pixel prediction
            encoder + decoder
        }
    }
}

pub fn estimate_flops(cfg: &BackboneConfig, tokens: usize) -> u64 {
    let t = tokens as u64;
    let h = cfg.hidden as u64;
    let m = cfg.mlp as u64;
    let branch = 2 * t * (4 * h * h + 2 * h * m) + 2 * (2 * t * t * h);
    let embed = 2 * t * (cfg.patch_dim() as u64 * h);
    let final_norm = 2 * t * h;
    (cfg.layers * cfg.parallelism) as u64 * branch + embed + final_norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    Fp32,
    Fp16,
}

impl Dtype {
    pub fn bytes(self) -> u64 {
        match self {
            Dtype::Fp32 => 4,
            Dtype::Fp16 => 2,
        }
    }
}

/// Byte estimate for one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub weights: u64,
    pub grads: u64,
    pub optimizer: u64,
    pub activations: u64,
}

impl MemoryEstimate {
    pub fn total(&self) -> u64 {
        self.weights + self.grads + self.optimizer + self.activations
    }
}

fn activation_elements(cfg: &BackboneConfig, tokens: u64, checkpointing: bool) -> u64 {
    let h = cfg.hidden as u64;
    let m = cfg.mlp as u64;
    let heads = cfg.heads as u64;
    let t = tokens;
    let branch = t * (8 * h + 2 * m) + heads * t * t;
    let layer = 2 * t * h + cfg.parallelism as u64 * branch;
    let layers = cfg.layers as u64;
    if checkpointing {
        layers * t * h + layer
    } else {
        layers * layer
    }
}

pub fn estimate_memory(
    cfg: &BackboneConfig,
    tokens: usize,
    batch: usize,
    dtype: Dtype,
    checkpointing: bool,
) -> MemoryEstimate {
    let params = count_params(cfg, ParamScope::Encoder);
    MemoryEstimate {
        weights: params * 4,
        grads: params * dtype.bytes(),
        optimizer: params * 8,
        activations: activation_elements(cfg, tokens as u64, checkpointing) * batch.max(1) as u64 * dtype.bytes(),
    }
}

/// Row of the `analyze` table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    /// Activation bytes indexed `[fp32, fp16][checkpointing off, on]`.
    pub activation_bytes: [[u64; 2]; 2],
    pub weight_bytes: u64,
}

impl CostReport {
    pub fn new(name: String, cfg: &BackboneConfig, tokens: usize, batch: usize) -> Self {
        let act = |d, c| estimate_memory(cfg, tokens, batch, d, c).activations;
        Self {
            name,
            params: count_params(cfg, ParamScope::Encoder),
            flops: estimate_flops(cfg, tokens),
            activation_bytes: [
                [act(Dtype::Fp32, false), act(Dtype::Fp32, true)],
                [act(Dtype::Fp16, false), act(Dtype::Fp16, true)],
            ],
            weight_bytes: estimate_memory(cfg, tokens, batch, Dtype::Fp32, false).weights,
        }
    }
}
