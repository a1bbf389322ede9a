use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::geometry::{rotated_iou, RotatedBox};
use crate::error::Result;

pub const DEFAULT_IOU_THRESHOLD: f32 = 0.5;

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageBoxes {
    pub dets: Vec<RotatedBox>,
    pub gts: Vec<RotatedBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// `(class_id, AP)` for every class with at least one ground-truth box.
    pub per_class: Vec<(u32, f64)>,
    pub map: f64,
}

/// Area under the monotone precision envelope (all points).
pub fn all_point_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = vec![0.0];
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    let mut mpre = vec![0.0];
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (0..mrec.len() - 1)
        .filter(|&i| mrec[i + 1] != mrec[i])
        .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
        .sum()
}

/// AP of one class over several images.
///
/// Detections are visited in descending score (ties: image, then detection
/// index). Each one takes its best-IoU ground truth of the same class and
/// image; it is a true positive when that IoU reaches `thresh` and the
/// ground truth is still unmatched.
pub fn class_ap(images: &[ImageBoxes], class_id: u32, thresh: f32) -> Result<Option<f64>> {
    let gts: Vec<Vec<&RotatedBox>> = images
        .iter()
        .map(|im| im.gts.iter().filter(|g| g.class_id == class_id).collect())
        .collect();
    let npos: usize = gts.iter().map(Vec::len).sum();
    if npos == 0 {
        return Ok(None);
    }
    let mut order: Vec<(usize, usize, f32)> = images
        .iter()
        .enumerate()
        .flat_map(|(ii, im)| {
            im.dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.class_id == class_id)
                .map(move |(di, d)| (ii, di, d.score))
        })
        .collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for (ii, di, _) in order {
        let det = &images[ii].dets[di];
        let mut best: Option<(usize, f32)> = None;
        for (gi, gt) in gts[ii].iter().enumerate() {
            let iou = rotated_iou(det, gt)?;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= thresh && !matched[ii][gi] => {
                matched[ii][gi] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    Ok(Some(all_point_ap(&recall, &precision)))
}

/// Per-class AP and their mean over classes present in the ground truth.
pub fn evaluate_detections(images: &[ImageBoxes], thresh: f32) -> Result<DetectionReport> {
    let classes: BTreeSet<u32> = images.iter().flat_map(|im| im.gts.iter().map(|g| g.class_id)).collect();
    let mut per_class = Vec::with_capacity(classes.len());
    for c in classes {
        if let Some(ap) = class_ap(images, c, thresh)? {
            per_class.push((c, ap));
        }
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|p| p.1).sum::<f64>() / per_class.len() as f64
    };
    Ok(DetectionReport { per_class, map })
}

/// Single-image convenience form returning `class_id -> AP`.
pub fn match_and_ap(dets: &[RotatedBox], gts: &[RotatedBox], thresh: f32) -> Result<BTreeMap<u32, f64>> {
    let images = [ImageBoxes {
        dets: dets.to_vec(),
        gts: gts.to_vec(),
    }];
    Ok(evaluate_detections(&images, thresh)?.per_class.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(cx: f32, score: f32) -> RotatedBox {
        RotatedBox::new(cx, 0.0, 1.0, 1.0, 0.0, 0).with_score(score)
    }

    #[test]
    fn trivial_cases() {
        let gt = [sq(0.0, 1.0)];
        assert_eq!(match_and_ap(&[sq(0.0, 0.9)], &gt, 0.5).unwrap()[&0], 1.0);
        assert_eq!(match_and_ap(&[], &gt, 0.5).unwrap()[&0], 0.0);
    }

    #[test]
    fn tp_fp_tp() {
        // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1 -> 0.5 * 1 + 0.5 * 2/3
        let gts = [sq(0.0, 1.0), sq(10.0, 1.0)];
        let dets = [sq(0.0, 0.9), sq(20.0, 0.8), sq(10.0, 0.7)];
        let ap = match_and_ap(&dets, &gts, 0.5).unwrap()[&0];
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let gts = [sq(0.0, 1.0)];
        let dets = [sq(0.0, 0.9), sq(0.05, 0.8)];
        assert_eq!(match_and_ap(&dets, &gts, 0.5).unwrap()[&0], 1.0);
        let dets = [sq(0.05, 0.9), sq(0.0, 0.95)];
        assert_eq!(match_and_ap(&dets, &gts, 0.5).unwrap()[&0], 1.0);
    }
}
