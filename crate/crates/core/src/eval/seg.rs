use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub ignore_id: Option<u32>,
}

impl SegMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, ignore_id: Option<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(dim_err!("{} labels for a {height}x{width} map", labels.len()));
        }
        Ok(Self {
            height,
            width,
            labels,
            ignore_id,
        })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
            ignore_id: None,
        }
    }

    /// Checks every label is `< num_classes` or the ignore id.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l as usize >= num_classes && Some(l) != self.ignore_id)
        {
            Some(l) => Err(contract_err!("label {l} outside {num_classes} classes")),
            None => Ok(()),
        }
    }

    /// Arg-max labels from `[C, H, W]` logits (first maximum wins).
    pub fn from_logits(logits: &[f32], classes: usize, height: usize, width: usize) -> Result<Self> {
        if logits.len() != classes * height * width || classes == 0 {
            return Err(dim_err!("{} logits for {classes}x{height}x{width}", logits.len()));
        }
        let hw = height * width;
        let labels = (0..hw)
            .map(|p| {
                let mut best = 0;
                for c in 1..classes {
                    if logits[c * hw + p] > logits[best * hw + p] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            ignore_id: None,
        })
    }
}

/// Accumulated `confusion[gt][pred]` counts; merging two tallies is addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, pred: &SegMap, gt: &SegMap) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(contract_err!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height,
                pred.width,
                gt.height,
                gt.width
            ));
        }
        let k = self.num_classes;
        for (&p, &t) in pred.labels.iter().zip(&gt.labels) {
            if Some(t) == gt.ignore_id {
                continue;
            }
            if t as usize >= k || p as usize >= k {
                return Err(contract_err!("label outside {k} classes (gt {t}, pred {p})"));
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSeg {
    pub class_id: u32,
    /// `None` when the class appears in neither prediction nor ground truth.
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub per_class: Vec<ClassSeg>,
    pub mean_f1: f64,
    pub miou: f64,
    /// Pixel accuracy over non-ignored pixels whose true class is included.
    pub oa: f64,
}

impl Confusion {
    /// Scores for every class not in `exclude`; means skip absent classes.
    pub fn report(&self, exclude: &[u32]) -> SegReport {
        let k = self.num_classes;
        let mut per_class = Vec::new();
        let (mut correct, mut total) = (0u64, 0u64);
        for c in 0..k {
            if exclude.contains(&(c as u32)) {
                continue;
            }
            let tp = self.get(c, c);
            let fn_: u64 = (0..k).map(|p| self.get(c, p)).sum::<u64>() - tp;
            let fp: u64 = (0..k).map(|t| self.get(t, c)).sum::<u64>() - tp;
            correct += tp;
            total += tp + fn_;
            let denom = tp + fp + fn_;
            let (f1, iou) = if denom == 0 {
                (None, None)
            } else {
                (
                    Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
                    Some(tp as f64 / denom as f64),
                )
            };
            per_class.push(ClassSeg {
                class_id: c as u32,
                f1,
                iou,
            });
        }
        let nan_mean = |vals: Vec<f64>| {
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        SegReport {
            mean_f1: nan_mean(per_class.iter().filter_map(|c| c.f1).collect()),
            miou: nan_mean(per_class.iter().filter_map(|c| c.iou).collect()),
            oa: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_class,
        }
    }
}

/// F1, IoU and overall accuracy of `pred` against `gt`.
pub fn seg_metrics(pred: &SegMap, gt: &SegMap, num_classes: usize, exclude: &[u32]) -> Result<SegReport> {
    let mut cm = Confusion::new(num_classes);
    cm.add(pred, gt)?;
    Ok(cm.report(exclude))
}
