use alloc::format;
use alloc::string::{String, ToString};

use crate::error::{Error, Result};

/// Width presets addressed by the letter in a model name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeLetter {
    pub letter: char,
    pub hidden: usize,
    pub mlp: usize,
    pub heads: usize,
    pub patch: usize,
    pub image: usize,
}

/// `B`, `L`, `H` and `G` are the published widths. `T` is a desk-scale
/// width (patch 4 on 32x32 inputs) used for runnable experiments.
pub const SIZE_LETTERS: [SizeLetter; 5] = [
    SizeLetter {
        letter: 'B',
        hidden: 768,
        mlp: 3072,
        heads: 12,
        patch: 16,
        image: 224,
    },
    SizeLetter {
        letter: 'L',
        hidden: 1024,
        mlp: 4096,
        heads: 16,
        patch: 16,
        image: 224,
    },
    SizeLetter {
        letter: 'H',
        hidden: 1536,
        mlp: 6144,
        heads: 16,
        patch: 16,
        image: 224,
    },
    SizeLetter {
        letter: 'G',
        hidden: 2048,
        mlp: 8192,
        heads: 32,
        patch: 16,
        image: 224,
    },
    SizeLetter {
        letter: 'T',
        hidden: 32,
        mlp: 128,
        heads: 4,
        patch: 4,
        image: 32,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackboneConfig {
    pub hidden: usize,
    pub layers: usize,
    pub parallelism: usize,
    pub mlp: usize,
    pub heads: usize,
    pub patch: usize,
    pub image: usize,
    pub in_channels: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Contract(format!("invalid backbone config: {what} ({self:?})")));
        if self.hidden == 0 || self.heads == 0 || self.mlp == 0 || self.patch == 0 || self.in_channels == 0 {
            return bad("zero-sized field");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden not divisible by heads");
        }
        if !self.image.is_multiple_of(self.patch) || self.image == 0 {
            return bad("image not divisible by patch");
        }
        if self.layers == 0 || self.parallelism == 0 {
            return bad("layers and parallelism must be >= 1");
        }
        Ok(())
    }

    /// Patch-grid side at the configured image size.
    pub fn grid(&self) -> usize {
        self.image / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Values per flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }

    /// Canonical `ViT-(A)(B)x(C)` name when the widths match a preset.
    pub fn name(&self) -> Option<String> {
        let s = SIZE_LETTERS.iter().find(|s| {
            s.hidden == self.hidden
                && s.mlp == self.mlp
                && s.heads == self.heads
                && s.patch == self.patch
                && s.image == self.image
        })?;
        if self.in_channels != 3 {
            return None;
        }
        Some(format!("ViT-{}{}x{}", s.letter, self.layers, self.parallelism))
    }

    pub fn with_layers(mut self, layers: usize, parallelism: usize) -> Self {
        self.layers = layers;
        self.parallelism = parallelism;
        self
    }
}

/// Parses `ViT-{B|L|H|G|T}{layers}x{parallelism}` (`×` is accepted for `x`).
pub fn parse_model_name(name: &str) -> Result<BackboneConfig> {
    let err = |token: &str| Error::Parse {
        input: name.to_string(),
        token: token.to_string(),
    };
    let rest = name
        .strip_prefix("ViT-")
        .ok_or_else(|| err(name.get(..4).unwrap_or(name)))?;
    let mut chars = rest.chars();
    let letter = chars.next().ok_or_else(|| err("<end>"))?;
    let size = SIZE_LETTERS
        .iter()
        .find(|s| s.letter == letter)
        .ok_or_else(|| err(&letter.to_string()))?;
    let body = chars.as_str();
    let (layers_s, par_s) = body
        .split_once('x')
        .or_else(|| body.split_once('×'))
        .ok_or_else(|| err(if body.is_empty() { "<end>" } else { body }))?;
    let number = |s: &str| -> Result<usize> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err(if s.is_empty() { "<end>" } else { s }));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(err(s)),
            Ok(v) => Ok(v),
        }
    };
    let cfg = BackboneConfig {
        hidden: size.hidden,
        layers: number(layers_s)?,
        parallelism: number(par_s)?,
        mlp: size.mlp,
        heads: size.heads,
        patch: size.patch,
        image: size.image,
        in_channels: 3,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_names() {
        let b = parse_model_name("ViT-B12x1").unwrap();
        assert_eq!(
            (b.hidden, b.mlp, b.heads, b.layers, b.parallelism),
            (768, 3072, 12, 12, 1)
        );
        let g = parse_model_name("ViT-G12x4").unwrap();
        assert_eq!(
            (g.hidden, g.mlp, g.heads, g.layers, g.parallelism),
            (2048, 8192, 32, 12, 4)
        );
        let l = parse_model_name("ViT-L12×4").unwrap();
        assert_eq!((l.hidden, l.mlp, l.heads), (1024, 4096, 16));
        let h = parse_model_name("ViT-H12x4").unwrap();
        assert_eq!((h.hidden, h.mlp, h.heads), (1536, 6144, 16));
        assert_eq!(g.grid(), 14);
        assert_eq!(g.tokens(), 196);
    }

    #[test]
    fn round_trip() {
        for n in ["ViT-G12x4", "ViT-B6x2", "ViT-T12x1", "ViT-H3x10"] {
            assert_eq!(parse_model_name(n).unwrap().name().as_deref(), Some(n));
        }
    }

    #[test]
    fn errors_name_the_token() {
        match parse_model_name("ViT-Q3x2") {
            Err(Error::Parse { token, .. }) => assert_eq!(token, "Q"),
            other => panic!("{other:?}"),
        }
        for (bad, tok) in [
            ("ViT-B12", "12"),
            ("ViT-B0x1", "0"),
            ("ViT-Bax2", "a"),
            ("VIT-B12x1", "VIT-"),
            ("ViT-B12x", "<end>"),
        ] {
            match parse_model_name(bad) {
                Err(Error::Parse { token, .. }) => assert_eq!(token, tok, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }
}
