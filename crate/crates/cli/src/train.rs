//! Epoch loop shared by `train-synth` and `train-real`.
//!
//! Every epoch draws its shuffle, crops and multi-pixel cell labels from
//! streams keyed by `(seed, epoch)`, so a run resumed from the checkpoint of
//! epoch k replays exactly the epochs an uninterrupted run would have.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use edgelab::imaging::Raster;
use edgelab::model::{edgemap_to_cells, LossConfig, ModelConfig, TrainBatch, CELL};
use edgelab::rng::{self, streams, substream};
use edgelab::{EdgeMap, Image, SuperEdge};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.sedg";
pub const LOSS_LOG_FILE: &str = "loss_log.tsv";
const LOSS_LOG_HEADER: &str = "epoch\tl_pix\tl_obj";

/// Images with the targets of both heads. All maps of one item share its size.
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub images: Vec<Image>,
    /// Binary supervision of the pixel head.
    pub pixel: Vec<EdgeMap>,
    /// Binary supervision of the object head; also its class-balance source.
    pub object: Vec<EdgeMap>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Image, pixel: EdgeMap, object: EdgeMap) -> Result<()> {
        if image.dims() != pixel.dims() || image.dims() != object.dims() {
            return Err(CliError::Config(format!(
                "label size {:?}/{:?} does not match image size {:?}",
                pixel.dims(),
                object.dims(),
                image.dims()
            )));
        }
        self.images.push(image);
        self.pixel.push(pixel.binarize(0.5));
        self.object.push(object.binarize(0.5));
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub loss: LossConfig,
    /// Square crop side (multiple of 8); 0 uses whole images padded to a common size.
    pub crop: usize,
    pub seed: u64,
    pub resume: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub l_pix: f64,
    pub l_obj: f64,
}

pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

impl RunPaths {
    pub fn new(run_dir: &Path) -> Self {
        RunPaths {
            checkpoint: run_dir.join(CHECKPOINT_FILE),
            loss_log: run_dir.join(LOSS_LOG_FILE),
        }
    }
}

pub fn format_loss_log(rows: &[EpochLoss]) -> String {
    let mut s = format!("{LOSS_LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.8}\t{:.8}", r.epoch, r.l_pix, r.l_obj);
    }
    s
}

pub fn parse_loss_log(text: &str) -> Result<Vec<EpochLoss>> {
    let bad = |i: usize| CliError::Config(format!("loss log line {}: malformed", i + 1));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(i));
        }
        rows.push(EpochLoss {
            epoch: f[0].parse().map_err(|_| bad(i))?,
            l_pix: f[1].parse().map_err(|_| bad(i))?,
            l_obj: f[2].parse().map_err(|_| bad(i))?,
        });
    }
    Ok(rows)
}

/// Pads every item to the largest size in the set, rounded up to a multiple
/// of 8: images by edge replication, label maps with zeros.
pub fn pad_to_common_size(set: &mut TrainSet) {
    let h = set.images.iter().map(|i| i.height()).max().unwrap_or(0).div_ceil(CELL) * CELL;
    let w = set.images.iter().map(|i| i.width()).max().unwrap_or(0).div_ceil(CELL) * CELL;
    for i in 0..set.len() {
        if set.images[i].dims() != (h, w) {
            set.images[i] = set.images[i].pad_replicate(h, w);
            set.pixel[i] = pad_zero(&set.pixel[i], h, w);
            set.object[i] = pad_zero(&set.object[i], h, w);
        }
    }
}

fn pad_zero(map: &EdgeMap, h: usize, w: usize) -> EdgeMap {
    Raster::from_fn(h, w, |y, x| if y < map.height() && x < map.width() { map.get(y, x) } else { 0.0 })
}

/// `(image, pixel map, object map)` of item `i`, cropped when configured.
fn training_view(set: &TrainSet, i: usize, crop: usize, rng: &mut rng::Rng) -> Result<(Image, EdgeMap, EdgeMap)> {
    if crop == 0 {
        return Ok((set.images[i].clone(), set.pixel[i].clone(), set.object[i].clone()));
    }
    let (h, w) = set.images[i].dims();
    let (ph, pw) = (h.max(crop), w.max(crop));
    let (img, pix, obj) = if (ph, pw) != (h, w) {
        (set.images[i].pad_replicate(ph, pw), pad_zero(&set.pixel[i], ph, pw), pad_zero(&set.object[i], ph, pw))
    } else {
        (set.images[i].clone(), set.pixel[i].clone(), set.object[i].clone())
    };
    let top = rng.random_range(0..=ph - crop);
    let left = rng.random_range(0..=pw - crop);
    Ok((
        img.crop(top, left, crop, crop)?,
        pix.crop(top, left, crop, crop)?,
        obj.crop(top, left, crop, crop)?,
    ))
}

/// Trains for `opts.epochs` epochs in total, writing a checkpoint and the loss
/// log after every epoch. With `opts.resume` an existing checkpoint in the run
/// directory is continued; otherwise training starts from `init` (or a fresh
/// initialisation). Returns the complete loss history.
pub fn train(run_dir: &Path, set: &TrainSet, opts: &TrainOptions, init: Option<SuperEdge>) -> Result<Vec<EpochLoss>> {
    if set.is_empty() {
        return Err(CliError::Config("no training samples".into()));
    }
    if opts.crop == 0 && set.images.iter().any(|i| i.dims() != set.images[0].dims() || i.height() % CELL != 0 || i.width() % CELL != 0) {
        return Err(CliError::Config("whole-image training needs equally sized images with sides divisible by 8".into()));
    }
    let paths = RunPaths::new(run_dir);
    let (mut model, mut adam, start, mut history) = if opts.resume && paths.checkpoint.is_file() {
        let ck = load_checkpoint(&paths.checkpoint, opts.lr)?;
        if ck.model.config != opts.model {
            return Err(CliError::Config(format!(
                "checkpoint {} holds a {:?} model but the configuration asks for {:?}",
                paths.checkpoint.display(),
                ck.model.config,
                opts.model
            )));
        }
        let adam = ck.adam.unwrap_or_else(|| ck.model.adam(opts.lr));
        let mut history = match std::fs::read_to_string(&paths.loss_log) {
            Ok(text) => parse_loss_log(&text)?,
            Err(_) => Vec::new(),
        };
        history.retain(|r| r.epoch <= ck.epoch);
        log::info!("resuming {} after epoch {}", run_dir.display(), ck.epoch);
        (ck.model, adam, ck.epoch, history)
    } else {
        let model = match init {
            Some(m) => m,
            None => SuperEdge::new(opts.model, opts.seed),
        };
        let adam = model.adam(opts.lr);
        (model, adam, 0, Vec::new())
    };

    for epoch in start..opts.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng::stream(opts.seed, substream(streams::SHUFFLE, e)));
        let mut crop_rng = rng::stream(opts.seed, substream(streams::CROP, e));
        let mut cell_rng = rng::stream(opts.seed, substream(streams::CELL_LABELS, e));
        let (mut sum_pix, mut sum_obj) = (0.0, 0.0);
        for chunk in order.chunks(opts.batch) {
            let (mut images, mut pixel_labels, mut object_labels, mut object_maps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let (img, pix, obj) = training_view(set, i, opts.crop, &mut crop_rng)?;
                pixel_labels.push(edgemap_to_cells(&pix, &mut cell_rng)?);
                object_labels.push(edgemap_to_cells(&obj, &mut cell_rng)?);
                images.push(img);
                object_maps.push(obj);
            }
            let batch = TrainBatch::new(&images, pixel_labels, object_labels, object_maps)?;
            let (lp, lo) = model.train_step(&batch, &mut adam, &opts.loss)?;
            sum_pix += lp * chunk.len() as f64;
            sum_obj += lo * chunk.len() as f64;
        }
        let row = EpochLoss {
            epoch: epoch + 1,
            l_pix: sum_pix / set.len() as f64,
            l_obj: sum_obj / set.len() as f64,
        };
        history.push(row);
        let ck = Checkpoint {
            model,
            adam: Some(adam),
            epoch: epoch + 1,
        };
        save_checkpoint(&paths.checkpoint, &ck)?;
        write_atomic(&paths.loss_log, format_loss_log(&history).as_bytes())?;
        log::info!("epoch {}/{}: l_pix {:.5} l_obj {:.5}", epoch + 1, opts.epochs, row.l_pix, row.l_obj);
        model = ck.model;
        adam = ck.adam.expect("just stored");
    }
    Ok(history)
}
