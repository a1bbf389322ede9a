//! Parallel-block vision transformers at desk scale.
//!
//! The crate covers the full pretrain-then-adapt pipeline on a small,
//! deterministic tensor engine:
//!
//! - [`autograd`]: dense tensors with a reverse-mode tape and finite-difference checks.
//! - [`backbone`]: the `ViT-(A)(B)x(C)` family with parallel branches, plus
//!   closed-form parameter, FLOP and memory accounting.
//! - [`mae`]: masked-autoencoder pretraining.
//! - [`vitdet`]: windowed/global attention schedule, scale-block pyramids,
//!   layer-wise LR decay, drop path and segmentation fine-tuning.
//! - [`eval`]: rotated-box IoU, AP/mAP, F1/OA/mIoU and a light segmentation head.
//! - [`data`]: synthetic scenes, tiling, sliding-window inference, subsampling.
//!
//! `no_std` with `alloc`; file formats and the command line live in the `svlb` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod backbone;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod mae;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod vitdet;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, TransferReport};
pub use rng::Rng;
pub use tensor::Tensor;
