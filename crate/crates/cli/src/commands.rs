//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use edgelab::imaging::{read_image, write_png};
use edgelab::postprocess::{combine_heads, fuse};
use edgelab::pseudo_label::{export_labels, list_images};
use edgelab::synthetic::generate_dataset_with;
use edgelab::{EdgeMap, Image, SuperEdge};

use crate::checkpoint::load_checkpoint;
use crate::config::Config;
use crate::dataset::ingest_dataset;
use crate::error::{CliError, Result};
use crate::train::{pad_to_common_size, train, TrainOptions, TrainSet};

pub const PIXEL_OUT: &str = "pixel";
pub const OBJECT_OUT: &str = "object";
pub const COMBINED_OUT: &str = "combined";
pub const FUSED_OUT: &str = "fused";
pub const REPORT_FILE: &str = "report.txt";
pub const PR_CURVE_FILE: &str = "pr_curve.tsv";

/// Turns collected per-item problems into a partial-failure error.
fn partial(what: &str, problems: &[String]) -> Result<()> {
    if problems.is_empty() {
        return Ok(());
    }
    for p in problems {
        log::warn!("{p}");
    }
    Err(CliError::PartialData(format!("{what}: {} item(s) failed, first: {}", problems.len(), problems[0])))
}

fn load_model(path: &Path) -> Result<SuperEdge> {
    Ok(load_checkpoint(path, 0.0)?.model)
}

pub fn synth(cfg: &Config) -> Result<()> {
    generate_dataset_with(&cfg.synthetic(), cfg.synth.count, cfg.seed, &cfg.synth.out_dir)?;
    log::info!("wrote {} samples to {}", cfg.synth.count, cfg.synth.out_dir.display());
    Ok(())
}

fn train_options(cfg: &Config, model: edgelab::model::ModelConfig) -> TrainOptions {
    TrainOptions {
        model,
        lr: cfg.train.lr,
        epochs: cfg.train.epochs,
        batch: cfg.train.batch,
        loss: cfg.loss(),
        crop: cfg.train.crop,
        seed: cfg.seed,
        resume: cfg.train.resume,
    }
}

/// Loads `(image, pixel target, object target)` triples; items that lack a
/// target or fail to load are reported and left out.
fn load_train_set(dir: &Path, targets: impl Fn(&crate::dataset::Sample) -> Option<(PathBuf, PathBuf)>) -> Result<(TrainSet, Vec<String>)> {
    let data = ingest_dataset(dir)?;
    let mut problems = Vec::new();
    let mut set = TrainSet::default();
    for s in &data.samples {
        let Some((pix, obj)) = targets(s) else {
            problems.push(format!("{} has no training labels", s.image.display()));
            continue;
        };
        let loaded = (|| -> Result<()> {
            let img = read_image(&s.image)?;
            let p = read_image(&pix)?;
            let o = if obj == pix { p.clone() } else { read_image(&obj)? };
            set.push(img, p, o)
        })();
        if let Err(e) = loaded {
            problems.push(format!("{}: {e}", s.image.display()));
        }
    }
    for w in &data.warnings {
        log::warn!("{w}");
    }
    if set.is_empty() {
        return Err(CliError::Config(format!("no usable training samples in {}", dir.display())));
    }
    if set.images.iter().any(|i| i.dims() != set.images[0].dims()) || set.images[0].height() % 8 != 0 || set.images[0].width() % 8 != 0 {
        pad_to_common_size(&mut set);
    }
    Ok((set, problems))
}

/// Stage 1: both heads learn the exact synthetic edges.
pub fn train_synth(cfg: &Config) -> Result<()> {
    let (set, problems) = load_train_set(&cfg.synth.out_dir, |s| s.edges.clone().map(|e| (e.clone(), e)))?;
    let opts = train_options(cfg, cfg.model_width.model_config());
    train(&cfg.train.synth_run_dir, &set, &opts, None)?;
    partial("train-synth", &problems)
}

/// Stage 2: pseudo-labels from the adapted pixel head and the classical pipeline.
pub fn annotate(cfg: &Config) -> Result<()> {
    let model = load_model(&cfg.annotate.checkpoint)?;
    let predictor = |img: &Image| -> edgelab::Result<EdgeMap> { Ok(model.predict(img)?.0) };
    let summary = export_labels(&cfg.annotate.dataset_dir, predictor, &cfg.labels())?;
    log::info!("labelled {}, already present {}, failed {}", summary.labelled, summary.skipped, summary.failed.len());
    let problems: Vec<String> = summary.failed.iter().map(|(f, e)| format!("{f}: {e}")).collect();
    partial("annotate", &problems)
}

/// Stage 3: the pixel head learns the adapted labels, the object head the
/// classical ones.
pub fn train_real(cfg: &Config) -> Result<()> {
    let (set, problems) = load_train_set(&cfg.annotate.dataset_dir, |s| Some((s.pixel_label.clone()?, s.object_label.clone()?)))?;
    let init = match &cfg.train.init_checkpoint {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let model = init.as_ref().map_or(cfg.model_width.model_config(), |m| m.config);
    train(&cfg.train.real_run_dir, &set, &train_options(cfg, model), init)?;
    partial("train-real", &problems)
}

/// Writes the pixel-head, object-head, averaged and fused maps of every input image.
pub fn infer(cfg: &Config) -> Result<()> {
    let model = load_model(&cfg.infer.checkpoint)?;
    let dir = &cfg.infer.input_dir;
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    let images = list_images(dir)?;
    if images.is_empty() {
        return Err(CliError::Config(format!("no images in {}", dir.display())));
    }
    let out = &cfg.infer.output_dir;
    for sub in [PIXEL_OUT, OBJECT_OUT, COMBINED_OUT, FUSED_OUT] {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| CliError::io(out.join(sub), e))?;
    }
    let mut problems = Vec::new();
    for path in &images {
        let name = format!("{}.png", path.file_stem().and_then(|s| s.to_str()).unwrap_or_default());
        let done = (|| -> edgelab::Result<()> {
            let img = read_image(path)?;
            let (pix, obj) = model.predict(&img)?;
            write_png(out.join(COMBINED_OUT).join(&name), &combine_heads(&pix, &obj)?)?;
            write_png(out.join(FUSED_OUT).join(&name), &fuse(&pix, &obj, cfg.fusion())?)?;
            write_png(out.join(PIXEL_OUT).join(&name), &pix)?;
            write_png(out.join(OBJECT_OUT).join(&name), &obj)
        })();
        if let Err(e) = done {
            problems.push(format!("{}: {e}", path.display()));
        }
    }
    log::info!("inferred {} of {} images into {}", images.len() - problems.len(), images.len(), out.display());
    partial("infer", &problems)
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    Ok(list_images(dir)?
        .into_iter()
        .map(|p| (p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(), p))
        .collect())
}

/// Scores prediction maps against ground truth paired by file stem.
pub fn eval(cfg: &Config) -> Result<()> {
    let preds = by_stem(&cfg.eval.pred_dir)?;
    let gts = by_stem(&cfg.eval.gt_dir)?;
    let mut problems = Vec::new();
    let (mut pred_maps, mut gt_maps) = (Vec::new(), Vec::new());
    for (stem, p) in &preds {
        let Some(g) = gts.get(stem) else {
            problems.push(format!("{} has no ground truth", p.display()));
            continue;
        };
        match read_image(p).and_then(|pm| Ok((pm, read_image(g)?.binarize(0.5)))) {
            Ok((pm, gm)) => {
                pred_maps.push(pm);
                gt_maps.push(gm);
            }
            Err(e) => problems.push(format!("{stem}: {e}")),
        }
    }
    for (stem, g) in &gts {
        if !preds.contains_key(stem) {
            problems.push(format!("{} has no prediction", g.display()));
        }
    }
    if pred_maps.is_empty() {
        return Err(CliError::Config(format!(
            "no prediction in {} pairs with ground truth in {}",
            cfg.eval.pred_dir.display(),
            cfg.eval.gt_dir.display()
        )));
    }
    let report = edgelab::evaluation::evaluate_dataset(&pred_maps, &gt_maps, &cfg.evaluation())?;
    let out = &cfg.eval.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    report.write_report(out.join(REPORT_FILE))?;
    report.write_pr_curve(out.join(PR_CURVE_FILE))?;
    log::info!("{} images: ODS {:.4} OIS {:.4} AP {:.4}", pred_maps.len(), report.ods, report.ois, report.ap);
    partial("eval", &problems)
}
