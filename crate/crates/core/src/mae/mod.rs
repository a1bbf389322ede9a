//! Masked-autoencoder pretraining.
//!
//! Each image is augmented, split into patches and embedded; a seeded
//! [`MaskPlan`] hides 75% of the tokens. Only the visible tokens pass
//! through the encoder. The decoder sees the full sequence again, with a
//! shared learnable mask token at every hidden position, and predicts raw
//! pixels; the loss is the mean squared error over hidden patches only.

mod augment;
mod config;
mod mask;
mod model;
mod pretrain;
mod schedule;

pub use augment::{augment, flip, resize_window, sample_crop, AugmentPolicy, MIN_AUGMENT_SIDE};
pub use config::DecoderConfig;
pub use mask::{make_mask_plan, masked_count, MaskPlan};
pub use model::{mae_loss, MaeModel, MaeOutput};
pub use pretrain::{pretrain, PretrainOptions, PretrainReport};
pub use schedule::{default_warmup, effective_lr, PretrainSchedule};

pub use crate::backbone::{patchify, patchify_tensor, unpatchify_tensor};
