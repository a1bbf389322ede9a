//! Adapting a pretrained plain backbone for dense prediction.
//!
//! Blocks 1, 2, 4, 5, 7, 8, 10 and 11 attend inside square windows (14 by
//! default) while blocks 3, 6, 9 and 12 attend globally. Padding tokens
//! introduced by non-divisible grids never take part in attention: each
//! window attends over its real tokens only, which equals padding and
//! masking the padded keys.
//!
//! Detection builds all four pyramid levels from the last layer; segmentation
//! feeds layers 3, 6, 9 and 12 into scale blocks 1 to 4.

mod adapted;
mod drop;
mod finetune;
mod interp;
mod lr;
mod pyramid;
mod schedule;
mod window;

pub use adapted::{AdaptedModel, AdaptedOutput};
pub use drop::{drop_path, Mode};
pub use finetune::{finetune_seg, FinetuneOptions, FinetuneReport, SegModel};
pub use interp::{bicubic_taps, interpolate_pos};
pub use lr::{layer_index_of, layerwise_lr, FinetuneSchedule};
pub use pyramid::{tokens_to_map, FeaturePyramid, Pyramid, ScaleBlock, Task, DEFAULT_PYRAMID_WIDTH};
pub use schedule::{AttentionSchedule, ADAPTED_LAYERS, TAP_LAYERS};
pub use window::{window_groups, window_partition, window_unpartition, PadMeta};
