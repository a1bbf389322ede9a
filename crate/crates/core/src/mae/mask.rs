use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::rng::Rng;

/// Seeded split of `0..total` into visible and masked token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub total: usize,
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    pub seed: u64,
}

/// Number of masked tokens: `round(total * ratio)`.
pub fn masked_count(total: usize, ratio: f32) -> usize {
    libm::round(total as f64 * ratio as f64) as usize
}

/// Uniform subset without replacement: a seeded shuffle whose first
/// `total - masked_count` entries stay visible.
pub fn make_mask_plan(total: usize, ratio: f32, rng: &mut Rng) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(contract_err!("mask ratio {ratio} outside [0, 1)"));
    }
    if total == 0 {
        return Err(contract_err!("mask plan over zero tokens"));
    }
    let seed = rng.seed();
    let perm = rng.permutation(total);
    let keep = total - masked_count(total, ratio);
    let mut visible_idx = perm[..keep].to_vec();
    let mut masked_idx = perm[keep..].to_vec();
    visible_idx.sort_unstable();
    masked_idx.sort_unstable();
    Ok(MaskPlan {
        total,
        visible_idx,
        masked_idx,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split() {
        let p = make_mask_plan(196, 0.75, &mut Rng::new(1)).unwrap();
        assert_eq!(p.visible_idx.len(), 49);
        assert_eq!(p.masked_idx.len(), 147);
        let mut all: Vec<usize> = p.visible_idx.iter().chain(&p.masked_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..196).collect::<Vec<_>>());
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let p = make_mask_plan(10, 0.0, &mut Rng::new(1)).unwrap();
        assert_eq!(p.visible_idx, (0..10).collect::<Vec<_>>());
        assert!(p.masked_idx.is_empty());
    }

    #[test]
    fn deterministic_and_validated() {
        let a = make_mask_plan(50, 0.5, &mut Rng::new(3)).unwrap();
        let b = make_mask_plan(50, 0.5, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(make_mask_plan(50, 1.0, &mut Rng::new(3)).is_err());
        assert!(make_mask_plan(50, -0.1, &mut Rng::new(3)).is_err());
    }
}
