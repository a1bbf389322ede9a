//! JSON experiment configuration.
//!
//! Every key is optional and unknown keys are rejected. A handful of
//! settings depend on the model and stay `null` until [`ExperimentConfig::resolve`]
//! fills them in; the resolved form is what gets echoed next to the outputs.
//!
//! | key | default |
//! |---|---|
//! | `model` | `"ViT-T12x1"` |
//! | `task` | set by the subcommand |
//! | `seed` | `0` |
//! | `dataset` | `null` (required by commands that read data) |
//! | `out_dir` | `"out"` |
//! | `pretrain.epochs` | 1600 for `ViT-B12x1`, else 400 |
//! | `pretrain.base_lr` | 1e-4 for `ViT-G12x4`, else 1.5e-4 |
//! | `pretrain.weight_decay` / `batch` / `mask_ratio` | 0.05 / 8 / 0.75 |
//! | `pretrain.warmup_epochs` | round(5% of epochs), at least 1 |
//! | `decoder.hidden` / `layers` / `heads` | min(64, encoder hidden) / 2 / 4 |
//! | `finetune.iters` / `lr` / `weight_decay` / `batch` | 80000 / 6e-5 / 0.01 / 2 |
//! | `finetune.layer_decay` / `drop_path` | 0.8 / 0.1 |
//! | `finetune.warmup_iters` / `warmup_ratio` | min(1500, iters) / 1e-6 |
//! | `finetune.window` / `pyramid_width` / `num_classes` | 14 / 256 / 4 |
//! | `finetune.crop` | `null` (train on whole images) |
//! | `eval.tile` / `eval.stride` | `null` (whole image) / 3/4 of the tile |
//! | `eval.iou_threshold` | 0.5 |
//! | `subsample.ratio` / `count` | 1.0 / `"instances"` |
//! | `synth.count` / `size` / `objects` / `classes` | 64 / 64 / 4 / 3 |
//!
//! Seeds: each stage derives its stream from `seed` by label (`"synth"`,
//! `"init"`, `"pretrain"`, `"adapt"`, `"subsample"`, `"finetune"`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svlb_core::backbone::{parse_model_name, BackboneConfig};
use svlb_core::data::PALETTE;
use svlb_core::mae::{default_warmup, DecoderConfig, PretrainSchedule};
use svlb_core::vitdet::{AttentionSchedule, FinetuneSchedule};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    Pretrain,
    Adapt,
    FinetuneSeg,
    Eval,
    Analyze,
    Subsample,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: String,
    pub task: TaskKind,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub pretrain: PretrainSection,
    pub decoder: DecoderSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub subsample: SubsampleSection,
    pub synth: SynthSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "ViT-T12x1".into(),
            task: TaskKind::default(),
            seed: 0,
            dataset: None,
            out_dir: "out".into(),
            pretrain: PretrainSection::default(),
            decoder: DecoderSection::default(),
            finetune: FinetuneSection::default(),
            eval: EvalSection::default(),
            subsample: SubsampleSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: Option<usize>,
    pub base_lr: Option<f32>,
    pub weight_decay: f32,
    pub batch: usize,
    pub mask_ratio: f32,
    pub warmup_epochs: Option<usize>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            epochs: None,
            base_lr: None,
            weight_decay: 0.05,
            batch: 8,
            mask_ratio: 0.75,
            warmup_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub hidden: Option<usize>,
    pub layers: usize,
    pub heads: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            hidden: None,
            layers: 2,
            heads: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub iters: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub layer_decay: f64,
    pub drop_path: f32,
    pub warmup_iters: Option<usize>,
    pub warmup_ratio: f64,
    pub window: usize,
    pub pyramid_width: usize,
    pub num_classes: usize,
    pub crop: Option<usize>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            iters: 80_000,
            lr: 6e-5,
            weight_decay: 0.01,
            batch: 2,
            layer_decay: 0.8,
            drop_path: 0.1,
            warmup_iters: None,
            warmup_ratio: 1e-6,
            window: 14,
            pyramid_width: 256,
            num_classes: 4,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tile: Option<usize>,
    pub stride: Option<usize>,
    pub iou_threshold: f32,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tile: None,
            stride: None,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountBy {
    #[default]
    Instances,
    Pixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsampleSection {
    pub ratio: f64,
    pub count: CountBy,
}

impl Default for SubsampleSection {
    fn default() -> Self {
        Self {
            ratio: 1.0,
            count: CountBy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub count: usize,
    pub size: usize,
    pub objects: usize,
    pub classes: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            count: 64,
            size: 64,
            objects: 4,
            classes: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn backbone(&self) -> CliResult<BackboneConfig> {
        parse_model_name(&self.model).map_err(CliError::config)
    }

    /// Fills every model-dependent default and checks the result.
    pub fn resolve(mut self) -> CliResult<Self> {
        let cfg = self.backbone()?;
        let published = PretrainSchedule::for_model(&self.model);
        let p = &mut self.pretrain;
        let epochs = *p.epochs.get_or_insert(published.epochs);
        p.base_lr.get_or_insert(published.base_lr);
        p.warmup_epochs.get_or_insert(default_warmup(epochs));
        self.decoder.hidden.get_or_insert(cfg.hidden.min(64));
        let f = &mut self.finetune;
        f.warmup_iters.get_or_insert(f.iters.min(1500));
        self.pretrain_schedule().validate().map_err(CliError::config)?;
        self.decoder_config().validate(cfg.hidden).map_err(CliError::config)?;
        self.finetune_schedule().validate().map_err(CliError::config)?;
        self.attention_schedule().validate().map_err(CliError::config)?;
        if self.finetune.batch == 0 || self.finetune.num_classes < 2 || self.finetune.pyramid_width == 0 {
            return Err(CliError::Config(
                "finetune needs batch >= 1, num_classes >= 2 and pyramid_width >= 1".into(),
            ));
        }
        if self.finetune.crop == Some(0) || self.eval.tile == Some(0) || self.eval.stride == Some(0) {
            return Err(CliError::Config("crop, tile and stride must be >= 1".into()));
        }
        if !(self.subsample.ratio > 0.0 && self.subsample.ratio <= 1.0) {
            return Err(CliError::Config(format!(
                "subsample ratio {} outside (0, 1]",
                self.subsample.ratio
            )));
        }
        if self.synth.classes == 0 || self.synth.classes > PALETTE.len() {
            return Err(CliError::Config(format!(
                "synth classes must be in 1..={}",
                PALETTE.len()
            )));
        }
        Ok(self)
    }

    pub fn pretrain_schedule(&self) -> PretrainSchedule {
        let p = &self.pretrain;
        let published = PretrainSchedule::for_model(&self.model);
        let epochs = p.epochs.unwrap_or(published.epochs);
        PretrainSchedule {
            epochs,
            base_lr: p.base_lr.unwrap_or(published.base_lr),
            weight_decay: p.weight_decay,
            batch: p.batch,
            mask_ratio: p.mask_ratio,
            warmup_epochs: p.warmup_epochs.unwrap_or(default_warmup(epochs)),
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let hidden = self
            .decoder
            .hidden
            .unwrap_or_else(|| self.backbone().map_or(64, |c| c.hidden.min(64)));
        DecoderConfig {
            hidden,
            layers: self.decoder.layers,
            heads: self.decoder.heads,
        }
    }

    pub fn finetune_schedule(&self) -> FinetuneSchedule {
        let f = &self.finetune;
        let mut s = FinetuneSchedule::segmentation(f.iters);
        s.lr = f.lr;
        s.weight_decay = f.weight_decay;
        s.layer_decay = f.layer_decay;
        s.drop_path = f.drop_path;
        s.warmup_iters = f.warmup_iters.unwrap_or(f.iters.min(1500));
        s.warmup_ratio = f.warmup_ratio;
        s
    }

    pub fn attention_schedule(&self) -> AttentionSchedule {
        AttentionSchedule::with_window(self.finetune.window)
    }

    /// Tile and stride for sliding inference on an image of `side` pixels.
    pub fn eval_tiling(&self, side: usize) -> (usize, usize) {
        let tile = self.eval.tile.unwrap_or(side);
        let stride = self.eval.stride.unwrap_or((tile * 3 / 4).max(1));
        (tile, stride)
    }
}
