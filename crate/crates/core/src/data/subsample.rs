use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::synth::SceneSample;
use crate::error::{contract_err, Result};
use crate::rng::Rng;

/// Number of items kept for `ratio` of `n` (round half away from zero).
pub fn subsample_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(contract_err!("subsample ratio must be in (0, 1], got {ratio}"));
    }
    let k = libm::round(ratio * n as f64) as usize;
    if k == 0 {
        return Err(contract_err!("ratio {ratio} of {n} items selects nothing"));
    }
    Ok(k)
}

/// Indices of the `round(ratio * n)` selected items, ascending.
///
/// The selection is a prefix of one seeded permutation, so for a fixed seed
/// a smaller ratio always picks a subset of a larger one.
pub fn subsample(n: usize, ratio: f64, rng: &Rng) -> Result<Vec<usize>> {
    let k = subsample_count(n, ratio)?;
    let mut idx = rng.split_str("subsample").permutation(n);
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountKind {
    /// Object instances per class.
    Instances,
    /// Mask pixels per label (background included).
    Pixels,
}

/// Per-class counts of a dataset, written as `class_id,count` rows plus a
/// `total` row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistributionReport {
    pub counts: BTreeMap<u32, u64>,
}

impl DistributionReport {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a SceneSample>, kind: CountKind) -> Self {
        let mut counts = BTreeMap::new();
        for s in samples {
            match kind {
                CountKind::Instances => {
                    for b in &s.boxes {
                        *counts.entry(b.class_id).or_insert(0) += 1;
                    }
                }
                CountKind::Pixels => {
                    if let Some(m) = &s.mask {
                        for &l in m.labels.iter().filter(|&&l| Some(l) != m.ignore_id) {
                            *counts.entry(l).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,count\n");
        for (c, n) in &self.counts {
            let _ = writeln!(s, "{c},{n}");
        }
        s + &format!("total,{}\n", self.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_nesting() {
        assert_eq!(subsample(100, 0.5, &Rng::new(1)).unwrap().len(), 50);
        assert_eq!(subsample(10, 1.0, &Rng::new(1)).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(subsample(10, 0.01, &Rng::new(1)).is_err());
        assert!(subsample(10, 0.0, &Rng::new(1)).is_err());
        let rng = Rng::new(77);
        let small = subsample(200, 0.05, &rng).unwrap();
        let big = subsample(200, 0.5, &rng).unwrap();
        assert!(small.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn csv_layout() {
        let mut r = DistributionReport::default();
        r.counts.insert(2, 5);
        r.counts.insert(0, 1);
        assert_eq!(r.to_csv(), "class_id,count\n0,1\n2,5\ntotal,6\n");
    }
}
