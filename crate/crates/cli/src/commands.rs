//! Subcommand bodies. Each writes its artifacts plus `config.json` (the
//! resolved config) and `manifest.txt` under the output directory.

use std::fmt::Write as _;
use std::path::Path;

use svlb_core::backbone::{parse_model_name, CostReport};
use svlb_core::data::{
    crop, plan_tiles_rect, sliding_infer, subsample as draw_subset, synth_scene, CountKind, DistributionReport,
    SceneSample, SceneSpec,
};
use svlb_core::eval::{evaluate_detections, Confusion, ImageBoxes, SegMap};
use svlb_core::mae::{pretrain as run_pretrain, MaeModel, PretrainOptions};
use svlb_core::vitdet::{finetune_seg as run_finetune, FinetuneOptions, SegModel};
use svlb_core::{ParamStore, Rng, Tensor, TransferReport};

use crate::checkpoint::{Checkpoint, DecoderMeta, ModelMeta};
use crate::config::{CountBy, ExperimentConfig, TaskKind};
use crate::dataset::{load_dir, read_boxes, scene_ids, Scene, DET_SUFFIX, GT_SUFFIX, IMAGE_SUFFIX, MASK_SUFFIX};
use crate::detfile::{format_ground_truth, parse_detections};
use crate::error::{CliError, CliResult};
use crate::output::{threads, OutDir};
use crate::raster::{encode_image, encode_mask, IGNORE_LABEL};
use crate::Common;

pub const CONFIG_ECHO: &str = "config.json";

impl Common {
    /// Config file, then flags, then model-dependent defaults. A model name
    /// stored in a checkpoint is used unless the file or a flag names one.
    pub fn resolve(&self, task: TaskKind, checkpoint_model: Option<&str>) -> CliResult<ExperimentConfig> {
        let mut explicit_model = self.model.is_some();
        let mut cfg = match &self.config {
            Some(p) => {
                let c = ExperimentConfig::load(p)?;
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                explicit_model |= serde_json::from_str::<serde_json::Value>(&text)
                    .map(|v| v.get("model").is_some())
                    .unwrap_or(false);
                c
            }
            None => ExperimentConfig::default(),
        };
        cfg.task = task;
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(m) = checkpoint_model {
            if !explicit_model {
                cfg.model = m.to_owned();
            } else if cfg.model != m {
                return Err(CliError::Config(format!(
                    "checkpoint holds {m} but the config names {}",
                    cfg.model
                )));
            }
        }
        cfg.resolve()
    }
}

fn dataset_dir(cfg: &ExperimentConfig) -> CliResult<&Path> {
    cfg.dataset
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs a dataset (--dataset or \"dataset\")".into()))
}

fn open_out(cfg: &ExperimentConfig) -> CliResult<OutDir> {
    let mut out = OutDir::create(&cfg.out_dir)?;
    out.write(CONFIG_ECHO, cfg.to_json().as_bytes())?;
    Ok(out)
}

fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, ModelMeta)> {
    let wrap = |source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    };
    let ck = Checkpoint::load(path).map_err(wrap)?;
    let meta = ck.meta().map_err(wrap)?;
    Ok((ck, meta))
}

pub fn analyze(models: &[String], tokens: Option<usize>, batch: usize) -> CliResult<()> {
    let mut rows = Vec::with_capacity(models.len());
    for name in models {
        let cfg = parse_model_name(name).map_err(CliError::config)?;
        rows.push(CostReport::new(
            name.clone(),
            &cfg,
            tokens.unwrap_or(cfg.tokens()),
            batch,
        ));
    }
    print!("{}", format_cost_table(&rows));
    Ok(())
}

fn format_cost_table(rows: &[CostReport]) -> String {
    let header = [
        "model",
        "params",
        "flops",
        "weights_bytes",
        "act_fp32",
        "act_fp32_ckpt",
        "act_fp16",
        "act_fp16_ckpt",
    ];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            let a = r.activation_bytes;
            [
                r.name.clone(),
                r.params.to_string(),
                r.flops.to_string(),
                r.weight_bytes.to_string(),
                a[0][0].to_string(),
                a[0][1].to_string(),
                a[1][0].to_string(),
                a[1][1].to_string(),
            ]
        })
        .collect();
    let width: Vec<usize> = (0..8)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap())
        .collect();
    let mut s = String::new();
    let mut line = |fields: &[&str]| {
        let parts: Vec<String> = fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if i == 0 {
                    format!("{f:<w$}", w = width[i])
                } else {
                    format!("{f:>w$}", w = width[i])
                }
            })
            .collect();
        let _ = writeln!(s, "{}", parts.join("  "));
    };
    line(&header);
    for c in &cells {
        line(&c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    s
}

pub fn synth(common: &Common) -> CliResult<()> {
    let cfg = common.resolve(TaskKind::Synth, None)?;
    let s = &cfg.synth;
    let spec = SceneSpec::new(s.size, s.objects, s.classes);
    let rng = Rng::new(cfg.seed).split_str("synth");
    let mut out = open_out(&cfg)?;
    for i in 0..s.count {
        let id = format!("scene_{i:05}");
        let scene = synth_scene(&spec, &rng.split(i as u64), &id)?;
        out.write(&format!("{id}{IMAGE_SUFFIX}"), &encode_image(&scene.image)?)?;
        if let Some(m) = &scene.mask {
            out.write(&format!("{id}{MASK_SUFFIX}"), &encode_mask(m)?)?;
        }
        out.write(
            &format!("{id}{GT_SUFFIX}"),
            format_ground_truth(&scene.boxes).as_bytes(),
        )?;
    }
    println!("wrote {} scenes to {}", s.count, cfg.out_dir.display());
    out.finish()
}

pub fn pretrain(common: &Common) -> CliResult<()> {
    let cfg = common.resolve(TaskKind::Pretrain, None)?;
    let images: Vec<Tensor> = load_dir(dataset_dir(&cfg)?)?.into_iter().map(|s| s.image).collect();
    let backbone = cfg.backbone()?;
    let decoder = cfg.decoder_config();
    let root = Rng::new(cfg.seed);
    let mut store = ParamStore::new();
    let model = MaeModel::new(backbone, decoder, &mut store, &root.split_str("init"))?;
    let schedule = cfg.pretrain_schedule();
    let report = run_pretrain(
        &model,
        &mut store,
        &schedule,
        &images,
        &root.split_str("pretrain"),
        &PretrainOptions::default(),
    )?;
    let meta = ModelMeta {
        model: cfg.model.clone(),
        adapted: false,
        decoder: Some(DecoderMeta {
            hidden: decoder.hidden,
            layers: decoder.layers,
            heads: decoder.heads,
        }),
        window: None,
        pyramid_width: None,
        num_classes: None,
    };
    let mut out = open_out(&cfg)?;
    out.write("pretrain.svlb", &Checkpoint::from_store(&meta, &store).encode())?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in report.loss_curve.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", e + 1);
    }
    out.write("loss.csv", csv.as_bytes())?;
    println!(
        "pretrained {} for {} epochs: loss {} -> {}",
        cfg.model,
        schedule.epochs,
        report.loss_curve.first().copied().unwrap_or(f32::NAN),
        report.loss_curve.last().copied().unwrap_or(f32::NAN)
    );
    out.finish()
}

fn seg_meta(cfg: &ExperimentConfig) -> ModelMeta {
    ModelMeta {
        model: cfg.model.clone(),
        adapted: true,
        decoder: None,
        window: Some(cfg.finetune.window),
        pyramid_width: Some(cfg.finetune.pyramid_width),
        num_classes: Some(cfg.finetune.num_classes),
    }
}

fn new_seg_model(cfg: &ExperimentConfig, store: &mut ParamStore) -> CliResult<SegModel> {
    let f = &cfg.finetune;
    SegModel::new(
        cfg.backbone()?,
        cfg.attention_schedule(),
        f.pyramid_width,
        f.num_classes,
        store,
        &Rng::new(cfg.seed).split_str("adapt"),
    )
    .map_err(CliError::config)
}

/// Segmentation model from either kind of checkpoint. Structure settings of
/// an adapted checkpoint override the config so the echo shows what ran.
fn seg_model_from(
    common: &Common,
    task: TaskKind,
    path: &Path,
) -> CliResult<(ExperimentConfig, SegModel, ParamStore, Option<TransferReport>)> {
    let (ck, meta) = load_checkpoint(path)?;
    let mut cfg = common.resolve(task, Some(&meta.model))?;
    let mut store = ParamStore::new();
    if meta.adapted {
        let f = &mut cfg.finetune;
        f.window = meta.window.unwrap_or(f.window);
        f.pyramid_width = meta.pyramid_width.unwrap_or(f.pyramid_width);
        f.num_classes = meta.num_classes.unwrap_or(f.num_classes);
        let model = new_seg_model(&cfg, &mut store)?;
        ck.restore_into(&mut store).map_err(|source| CliError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((cfg, model, store, None))
    } else {
        let model = new_seg_model(&cfg, &mut store)?;
        let src = ck.to_store().map_err(|source| CliError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })?;
        let report = store.copy_shared(&src)?;
        Ok((cfg, model, store, Some(report)))
    }
}

fn transfer_text(r: &TransferReport) -> String {
    let mut s = String::new();
    for (tag, names) in [
        ("copied", &r.copied),
        ("initialized", &r.initialized),
        ("unused", &r.unused),
    ] {
        for n in names {
            let _ = writeln!(s, "{tag} {n}");
        }
    }
    s
}

pub fn adapt(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let (cfg, _model, store, report) = seg_model_from(common, TaskKind::Adapt, checkpoint)?;
    let report = report.ok_or_else(|| CliError::Input(format!("{} is already adapted", checkpoint.display())))?;
    let mut out = open_out(&cfg)?;
    out.write(
        "adapted.svlb",
        &Checkpoint::from_store(&seg_meta(&cfg), &store).encode(),
    )?;
    out.write("transfer.txt", transfer_text(&report).as_bytes())?;
    println!(
        "copied {} tensors, initialized {}, unused {}",
        report.copied.len(),
        report.initialized.len(),
        report.unused.len()
    );
    out.finish()
}

/// Crops an image and its mask into `side` tiles; padding is ignored by the loss.
fn training_pairs(scene: &Scene, crop_side: Option<usize>) -> CliResult<Vec<(Tensor, SegMap)>> {
    let mask = scene
        .mask
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("scene {} has no mask", scene.id)))?;
    let Some(side) = crop_side else {
        return Ok(vec![(scene.image.clone(), mask.clone())]);
    };
    // Labels are shifted by one so that zero padding marks ignored pixels.
    let shifted = Tensor::new(
        &[1, mask.height, mask.width],
        mask.labels
            .iter()
            .map(|&l| if Some(l) == mask.ignore_id { 0.0 } else { (l + 1) as f32 })
            .collect(),
    )?;
    let plan = plan_tiles_rect(mask.width, mask.height, side, side)?;
    let mut pairs = Vec::with_capacity(plan.origins.len());
    for &o in &plan.origins {
        let labels = crop(&shifted, o, side)?
            .data()
            .iter()
            .map(|&v| if v == 0.0 { IGNORE_LABEL } else { v as u32 - 1 })
            .collect();
        pairs.push((
            crop(&scene.image, o, side)?,
            SegMap::new(side, side, labels, Some(IGNORE_LABEL))?,
        ));
    }
    Ok(pairs)
}

pub fn finetune_seg(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let (cfg, model, mut store, _) = seg_model_from(common, TaskKind::FinetuneSeg, checkpoint)?;
    let scenes = load_dir(dataset_dir(&cfg)?)?;
    let root = Rng::new(cfg.seed);
    let subset =
        draw_subset(scenes.len(), cfg.subsample.ratio, &root.split_str("subsample")).map_err(CliError::config)?;
    let mut data = Vec::new();
    for &i in &subset {
        data.extend(training_pairs(&scenes[i], cfg.finetune.crop)?);
    }
    let opts = FinetuneOptions::new(cfg.finetune_schedule(), cfg.finetune.batch);
    let report = run_finetune(&model, &mut store, &opts, &data, &root.split_str("finetune"))?;
    let mut out = open_out(&cfg)?;
    out.write(
        "finetune.svlb",
        &Checkpoint::from_store(&seg_meta(&cfg), &store).encode(),
    )?;
    let mut csv = String::from("iter,loss\n");
    for (i, l) in report.loss_curve.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    out.write("loss.csv", csv.as_bytes())?;
    println!(
        "fine-tuned on {} samples for {} iterations: loss {} -> {}",
        data.len(),
        cfg.finetune.iters,
        report.loss_curve.first().copied().unwrap_or(f32::NAN),
        report.loss_curve.last().copied().unwrap_or(f32::NAN)
    );
    out.finish()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Confusion of one scene plus its predicted map.
fn score_scene(
    cfg: &ExperimentConfig,
    model: &SegModel,
    store: &ParamStore,
    scene: &Scene,
) -> CliResult<(Confusion, SegMap)> {
    let gt = scene
        .mask
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("scene {} has no mask", scene.id)))?;
    let (tile, stride) = cfg.eval_tiling(gt.height.max(gt.width));
    let logits = sliding_infer(|t| model.predict_logits(store, t), &scene.image, tile, stride)?;
    let [k, h, w] = *logits.shape() else { unreachable!() };
    let pred = SegMap::from_logits(logits.data(), k, h, w)?;
    let mut cm = Confusion::new(cfg.finetune.num_classes);
    cm.add(&pred, gt)?;
    Ok((cm, pred))
}

pub fn eval_segmentation(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let (cfg, model, store, _) = seg_model_from(common, TaskKind::Eval, checkpoint)?;
    let patch = cfg.backbone()?.patch;
    if cfg.eval.tile.is_some_and(|t| t % patch != 0) {
        return Err(CliError::Config(format!(
            "eval tile must be a multiple of the patch size {patch}"
        )));
    }
    let scenes = load_dir(dataset_dir(&cfg)?)?;
    let workers = threads()?.min(scenes.len());
    // Scenes are split into contiguous chunks; results come back in scene order.
    let chunk = scenes.len().div_ceil(workers);
    let results: Vec<CliResult<(Confusion, SegMap)>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| {
                let (cfg, model, store) = (&cfg, &model, &store);
                s.spawn(move || {
                    part.iter()
                        .map(|sc| score_scene(cfg, model, store, sc))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("eval worker panicked"))
            .collect()
    });
    let mut out = open_out(&cfg)?;
    let mut total = Confusion::new(cfg.finetune.num_classes);
    for (scene, r) in scenes.iter().zip(results) {
        let (cm, pred) = r?;
        total.merge(&cm);
        out.write(&format!("{}.pred.svlr", scene.id), &encode_mask(&pred)?)?;
    }
    let rep = total.report(&[]);
    let mut csv = String::from("class_id,f1,iou\n");
    for c in &rep.per_class {
        let _ = writeln!(csv, "{},{},{}", c.class_id, opt_cell(c.f1), opt_cell(c.iou));
    }
    let _ = writeln!(csv, "mean_f1,{}\nmiou,{}\noa,{}", rep.mean_f1, rep.miou, rep.oa);
    out.write("eval.csv", csv.as_bytes())?;
    println!("mF1 {:.4}  mIoU {:.4}  OA {:.4}", rep.mean_f1, rep.miou, rep.oa);
    out.finish()
}

pub fn eval_detections(common: &Common, dets: &Path) -> CliResult<()> {
    let cfg = common.resolve(TaskKind::Eval, None)?;
    let dir = dataset_dir(&cfg)?;
    let mut images = Vec::new();
    for id in scene_ids(dir)? {
        let gt_path = dir.join(format!("{id}{GT_SUFFIX}"));
        let gts = if gt_path.exists() {
            read_boxes(&gt_path)?
        } else {
            Vec::new()
        };
        let det_path = dets.join(format!("{id}{DET_SUFFIX}"));
        let dets = if det_path.exists() {
            let text = std::fs::read_to_string(&det_path).map_err(|e| CliError::io(&det_path, e))?;
            parse_detections(&text).map_err(|e| CliError::Input(format!("{}: {e}", det_path.display())))?
        } else {
            Vec::new()
        };
        images.push(ImageBoxes { dets, gts });
    }
    let rep = evaluate_detections(&images, cfg.eval.iou_threshold)?;
    let mut csv = String::from("class_id,ap\n");
    for (c, ap) in &rep.per_class {
        let _ = writeln!(csv, "{c},{ap}");
    }
    let _ = writeln!(csv, "map,{}", rep.map);
    let mut out = open_out(&cfg)?;
    out.write("eval.csv", csv.as_bytes())?;
    println!("mAP {:.4} over {} classes", rep.map, rep.per_class.len());
    out.finish()
}

pub fn subsample(common: &Common) -> CliResult<()> {
    let cfg = common.resolve(TaskKind::Subsample, None)?;
    let scenes = load_dir(dataset_dir(&cfg)?)?;
    let idx = draw_subset(
        scenes.len(),
        cfg.subsample.ratio,
        &Rng::new(cfg.seed).split_str("subsample"),
    )
    .map_err(CliError::config)?;
    let kind = match cfg.subsample.count {
        CountBy::Instances => CountKind::Instances,
        CountBy::Pixels => CountKind::Pixels,
    };
    let mut samples = Vec::with_capacity(idx.len());
    let mut list = String::new();
    for &i in &idx {
        let s = &scenes[i];
        let missing = match kind {
            CountKind::Instances => s.boxes.is_none(),
            CountKind::Pixels => s.mask.is_none(),
        };
        if missing {
            return Err(CliError::Input(format!(
                "scene {} lacks the annotation being counted",
                s.id
            )));
        }
        let _ = writeln!(list, "{}", s.id);
        samples.push(SceneSample {
            image: s.image.clone(),
            boxes: s.boxes.clone().unwrap_or_default(),
            objects: Vec::new(),
            mask: s.mask.clone(),
            id: s.id.clone(),
        });
    }
    let report = DistributionReport::from_samples(&samples, kind);
    let mut out = open_out(&cfg)?;
    out.write("subset.txt", list.as_bytes())?;
    out.write("distribution.csv", report.to_csv().as_bytes())?;
    println!(
        "kept {} of {} scenes, {} counted",
        idx.len(),
        scenes.len(),
        report.total()
    );
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crops_mark_padding_as_ignored() {
        let mask = SegMap::new(3, 3, vec![0, 1, 2, 3, 0, 1, 2, 3, 0], Some(IGNORE_LABEL)).unwrap();
        let scene = Scene {
            id: "x".into(),
            image: Tensor::zeros(&[3, 3, 3]).unwrap(),
            mask: Some(mask),
            boxes: None,
        };
        assert_eq!(training_pairs(&scene, Some(2)).unwrap().len(), 4);
        let pairs = training_pairs(&scene, Some(4)).unwrap();
        let i = IGNORE_LABEL;
        assert_eq!(pairs[0].1.labels, vec![0, 1, 2, i, 3, 0, 1, i, 2, 3, 0, i, i, i, i, i]);
    }
}
