//! Synthetic scenes, tiling, sliding-window inference and subsampling.

mod infer;
mod subsample;
mod synth;
mod tiles;

pub use infer::sliding_infer;
pub use subsample::{subsample, subsample_count, CountKind, DistributionReport};
pub use synth::{synth_scene, SceneObject, SceneSample, SceneSpec, Shape, MIN_SCENE_SIDE, PALETTE};
pub use tiles::{crop, plan_axis, plan_tiles, plan_tiles_rect, tile_boxes, TilePlan};
