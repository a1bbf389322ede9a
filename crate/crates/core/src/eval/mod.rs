//! Evaluation mathematics and the segmentation head.
//!
//! Rotated IoU clips one rectangle against the other (Sutherland-Hodgman)
//! after canonicalizing both to `w >= h`. AP uses greedy score-ordered
//! matching and all-point interpolation; mAP averages classes that have
//! ground truth. Segmentation scores come from a confusion matrix so
//! per-image tallies merge by addition.

mod ap;
mod geometry;
mod head;
mod seg;

pub use ap::{
    all_point_ap, class_ap, evaluate_detections, match_and_ap, DetectionReport, ImageBoxes, DEFAULT_IOU_THRESHOLD,
};
pub use geometry::{clip_polygon, polygon_area, rotated_iou, RotatedBox};
pub use head::SegHead;
pub use seg::{seg_metrics, ClassSeg, Confusion, SegMap, SegReport};

/// Result of evaluating either task.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Detection(DetectionReport),
    Segmentation(SegReport),
}
