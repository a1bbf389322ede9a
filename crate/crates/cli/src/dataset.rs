//! Scene directories as written by `svlb synth`.
//!
//! Each scene `{id}` has `{id}.img.svlr` (f32 image) and optionally
//! `{id}.mask.svlr` (u8 labels) and `{id}.gt.txt` (rotated boxes).
//! Scenes are ordered by id.

use std::path::Path;

use svlb_core::eval::{RotatedBox, SegMap};
use svlb_core::Tensor;

use crate::detfile::parse_ground_truth;
use crate::error::{CliError, CliResult};
use crate::raster::{read_image, read_mask};

pub const IMAGE_SUFFIX: &str = ".img.svlr";
pub const MASK_SUFFIX: &str = ".mask.svlr";
pub const GT_SUFFIX: &str = ".gt.txt";
pub const DET_SUFFIX: &str = ".det.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Tensor,
    pub mask: Option<SegMap>,
    pub boxes: Option<Vec<RotatedBox>>,
}

pub fn scene_ids(dir: &Path) -> CliResult<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(IMAGE_SUFFIX)) {
            ids.push(id.to_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Input(format!("{}: no *{IMAGE_SUFFIX} files", dir.display())));
    }
    Ok(ids)
}

pub fn read_boxes(path: &Path) -> CliResult<Vec<RotatedBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_ground_truth(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_scene(dir: &Path, id: &str) -> CliResult<Scene> {
    let image = read_image(&dir.join(format!("{id}{IMAGE_SUFFIX}")))?;
    let mask_path = dir.join(format!("{id}{MASK_SUFFIX}"));
    let mask = if mask_path.exists() {
        Some(read_mask(&mask_path)?)
    } else {
        None
    };
    let gt_path = dir.join(format!("{id}{GT_SUFFIX}"));
    let boxes = if gt_path.exists() {
        Some(read_boxes(&gt_path)?)
    } else {
        None
    };
    Ok(Scene {
        id: id.to_owned(),
        image,
        mask,
        boxes,
    })
}

pub fn load_dir(dir: &Path) -> CliResult<Vec<Scene>> {
    scene_ids(dir)?.iter().map(|id| load_scene(dir, id)).collect()
}
