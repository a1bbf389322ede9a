use crate::error::{contract_err, Result};

/// Lightweight MAE decoder; the MLP width is `4 * hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
        }
    }
}

impl DecoderConfig {
    pub fn mlp(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self, encoder_hidden: usize) -> Result<()> {
        if self.hidden == 0
            || self.heads == 0
            || !self.hidden.is_multiple_of(self.heads)
            || !self.hidden.is_multiple_of(4)
        {
            return Err(contract_err!("invalid decoder config {self:?}"));
        }
        if self.hidden > encoder_hidden {
            return Err(contract_err!(
                "decoder hidden {} exceeds encoder hidden {encoder_hidden}",
                self.hidden
            ));
        }
        Ok(())
    }
}
