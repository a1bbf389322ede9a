use alloc::vec::Vec;

use crate::error::{contract_err, Error, Result};

/// Per-layer attention kinds for a 12-layer adapted backbone (1-based layer
/// numbers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionSchedule {
    pub local_blocks: Vec<usize>,
    pub global_blocks: Vec<usize>,
    pub window: usize,
}

pub const ADAPTED_LAYERS: usize = 12;
/// Layers whose outputs feed the pyramid (1-based).
pub const TAP_LAYERS: [usize; 4] = [3, 6, 9, 12];

impl Default for AttentionSchedule {
    fn default() -> Self {
        Self::with_window(14)
    }
}

impl AttentionSchedule {
    /// Windowed attention in blocks 1, 2, 4, 5, 7, 8, 10, 11 and global
    /// attention in blocks 3, 6, 9, 12.
    pub fn with_window(window: usize) -> Self {
        Self {
            local_blocks: alloc::vec![1, 2, 4, 5, 7, 8, 10, 11],
            global_blocks: alloc::vec![3, 6, 9, 12],
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(contract_err!("window size must be >= 1"));
        }
        let mut seen = [false; ADAPTED_LAYERS + 1];
        for &l in self.local_blocks.iter().chain(&self.global_blocks) {
            if l == 0 || l > ADAPTED_LAYERS || seen[l] {
                return Err(contract_err!("layer {l} is repeated or outside 1..=12"));
            }
            seen[l] = true;
        }
        if seen[1..].iter().any(|s| !s) {
            return Err(contract_err!("local and global blocks must cover all 12 layers"));
        }
        Ok(())
    }

    pub fn is_local(&self, layer: usize) -> bool {
        self.local_blocks.contains(&layer)
    }

    /// Rejects depths other than the 12 the schedule is defined for.
    pub fn check_depth(layers: usize) -> Result<()> {
        if layers != ADAPTED_LAYERS {
            return Err(Error::Unsupported(alloc::format!(
                "windowed adaptation is defined for 12-layer backbones, got {layers}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_partitions_twelve_layers() {
        let s = AttentionSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.window, 14);
        let mut all: Vec<usize> = s.local_blocks.iter().chain(&s.global_blocks).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (1..=12).collect::<Vec<_>>());
        assert!(AttentionSchedule::check_depth(24).is_err());
    }

    #[test]
    fn overlapping_schedule_rejected() {
        let mut s = AttentionSchedule::default();
        s.global_blocks.push(1);
        assert!(s.validate().is_err());
    }
}
