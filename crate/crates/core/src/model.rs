//! The dual-decoder edge network, its cell encoding and its losses.
//!
//! A VGG-style encoder reduces the input by 8 in each direction. Two heads
//! read the shared features: the pixel head predicts 65 logits per 8x8 cell
//! (64 in-cell positions plus a "no edge" dustbin); the object head predicts
//! 195 channels, split into query/key/value triples of 65 channels for one
//! self-attention layer over all cells, followed by a 1x1 projection.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::imaging::Raster;
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{adam_step, AdamState, BatchNormStats, Tape, Tensor, Var};

/// Side of the square patch summarised by one cell.
pub const CELL: usize = 8;
/// Logits per cell: 64 positions plus the dustbin.
pub const CELL_CLASSES: usize = CELL * CELL + 1;
/// Label of a cell without edge pixels.
pub const DUSTBIN: usize = CELL * CELL;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output channels of encoder blocks 1-4.
    pub channels: [usize; 4],
    /// Width of the 3x3 layer opening each head.
    pub head_channels: usize,
}

impl ModelConfig {
    /// The published layer widths.
    pub const FULL: ModelConfig = ModelConfig {
        channels: [64, 64, 128, 128],
        head_channels: 256,
    };
    /// Quarter-width variant that trains on a single CPU core in minutes.
    pub const DESK: ModelConfig = ModelConfig {
        channels: [16, 16, 32, 32],
        head_channels: 64,
    };
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::FULL
    }
}

/// Ordered named tensors: learnable weights plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        ModelParams { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    fn push(&mut self, name: String, t: Tensor<T>) {
        self.entries.push((name, t));
    }

    /// Running statistics are state, not parameters.
    pub fn is_trainable(name: &str) -> bool {
        !name.ends_with(".running_mean") && !name.ends_with(".running_var")
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().filter(|(n, _)| Self::is_trainable(n)).map(|(_, t)| t)
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().count()
    }
}

/// Per-cell targets for one image: `rows x cols` labels in `0..=64`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellLabels {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
}

impl CellLabels {
    pub fn get(&self, r: usize, c: usize) -> usize {
        self.labels[r * self.cols + c]
    }
}

/// Encodes a binary map cell by cell: no edge pixel gives the dustbin, one
/// gives its in-cell raster index, several give a uniformly random one of them.
pub fn edgemap_to_cells<T: Scalar>(binary: &Raster<T>, rng: &mut Rng) -> Result<CellLabels> {
    let (h, w) = binary.dims();
    if h % CELL != 0 || w % CELL != 0 {
        return Err(Error::shape(format!("edgemap_to_cells: {h}x{w} is not a multiple of {CELL}")));
    }
    let (rows, cols) = (h / CELL, w / CELL);
    let half = T::lit(0.5);
    let mut labels = Vec::with_capacity(rows * cols);
    let mut hits = Vec::with_capacity(CELL * CELL);
    for r in 0..rows {
        for c in 0..cols {
            hits.clear();
            for k in 0..CELL * CELL {
                if binary.get(r * CELL + k / CELL, c * CELL + k % CELL) >= half {
                    hits.push(k);
                }
            }
            labels.push(match hits.len() {
                0 => DUSTBIN,
                1 => hits[0],
                n => hits[rng.random_range(0..n)],
            });
        }
    }
    Ok(CellLabels { rows, cols, labels })
}

/// Channel softmax, dustbin dropped, depth-to-space: channel `k` of cell
/// `(r, c)` becomes pixel `(8r + k / 8, 8c + k % 8)`. One map per batch item.
pub fn cells_to_edgemap<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Raster<T>>> {
    let (n, ch, rows, cols) = logits.dims4()?;
    if ch != CELL_CLASSES {
        return Err(Error::shape(format!("cells_to_edgemap: expected {CELL_CLASSES} channels, got {ch}")));
    }
    let plane = rows * cols;
    let data = logits.data();
    let mut maps = Vec::with_capacity(n);
    for b in 0..n {
        let mut out = Raster::zeros(rows * CELL, cols * CELL);
        let base = b * ch * plane;
        for cell in 0..plane {
            let at = |k: usize| data[base + k * plane + cell].as_f64();
            let max = (0..ch).map(at).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..ch).map(|k| (at(k) - max).exp()).sum();
            let (r, c) = (cell / cols, cell % cols);
            for k in 0..DUSTBIN {
                out.set(r * CELL + k / CELL, c * CELL + k % CELL, T::lit((at(k) - max).exp() / z));
            }
        }
        maps.push(out);
    }
    Ok(maps)
}

/// Weighting of the object loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1.1 }
    }
}

/// Class-balancing weights `(alpha, beta)` of a binary pseudo ground truth:
/// `alpha = lambda |Y+| / (|Y+| + |Y-|)` for dustbin cells and
/// `beta = |Y-| / (|Y+| + |Y-|)` for edge cells, counted in pixels.
pub fn balance_weights<T: Scalar>(pseudo_gt: &Raster<T>, cfg: &LossConfig) -> (f64, f64) {
    let pos = pseudo_gt.count_nonzero() as f64;
    let total = pseudo_gt.len() as f64;
    let neg = total - pos;
    (cfg.lambda * pos / total, neg / total)
}

/// Per-cell object-loss weights for one image.
pub fn object_weights<T: Scalar>(labels: &CellLabels, pseudo_gt: &Raster<T>, cfg: &LossConfig) -> Vec<T> {
    let (alpha, beta) = balance_weights(pseudo_gt, cfg);
    labels
        .labels
        .iter()
        .map(|&y| T::lit(if y == DUSTBIN { alpha } else { beta }))
        .collect()
}

/// Mean per-cell cross-entropy: weight `64 / (H W)` per cell, averaged over the batch.
pub fn loss_pix<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[CellLabels]) -> Result<Var> {
    let (n, _, rows, cols) = tape.value(logits).dims4()?;
    check_batch(labels, n, rows, cols)?;
    let flat: Vec<usize> = labels.iter().flat_map(|l| l.labels.iter().copied()).collect();
    let w = T::lit(1.0 / (rows * cols * n) as f64);
    tape.cross_entropy_cell(logits, &flat, &vec![w; flat.len()])
}

/// Class-balanced cross-entropy summed over cells, averaged over the batch.
pub fn loss_obj<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[CellLabels],
    pseudo_gt: &[Raster<T>],
    cfg: &LossConfig,
) -> Result<Var> {
    let (n, _, rows, cols) = tape.value(logits).dims4()?;
    check_batch(labels, n, rows, cols)?;
    if pseudo_gt.len() != n {
        return Err(Error::shape(format!("loss_obj: {n} images but {} pseudo maps", pseudo_gt.len())));
    }
    let weights = batch_object_weights(labels, pseudo_gt, cfg)?;
    let flat: Vec<usize> = labels.iter().flat_map(|l| l.labels.iter().copied()).collect();
    tape.cross_entropy_cell(logits, &flat, &weights)
}

fn batch_object_weights<T: Scalar>(labels: &[CellLabels], pseudo_gt: &[Raster<T>], cfg: &LossConfig) -> Result<Vec<T>> {
    let inv_n = 1.0 / labels.len() as f64;
    let mut out = Vec::new();
    for (l, gt) in labels.iter().zip(pseudo_gt) {
        if gt.dims() != (l.rows * CELL, l.cols * CELL) {
            return Err(Error::shape("loss_obj: pseudo map does not match the cell grid"));
        }
        out.extend(object_weights(l, gt, cfg).into_iter().map(|w| w * T::lit(inv_n)));
    }
    Ok(out)
}

fn check_batch(labels: &[CellLabels], n: usize, rows: usize, cols: usize) -> Result<()> {
    if labels.len() != n || labels.iter().any(|l| l.rows != rows || l.cols != cols) {
        return Err(Error::shape(format!(
            "{n} x {rows}x{cols} logits do not match the supplied cell labels"
        )));
    }
    Ok(())
}

pub fn loss_total<T: Scalar>(tape: &mut Tape<T>, l_pix: Var, l_obj: Var) -> Result<Var> {
    tape.add(l_pix, l_obj)
}

/// One training batch with precomputed targets.
#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    /// `B x 1 x H x W`
    pub images: Tensor<T>,
    pub pixel_labels: Vec<CellLabels>,
    pub object_labels: Vec<CellLabels>,
    pub object_maps: Vec<Raster<T>>,
}

impl<T: Scalar> TrainBatch<T> {
    pub fn new(
        images: &[Raster<T>],
        pixel_labels: Vec<CellLabels>,
        object_labels: Vec<CellLabels>,
        object_maps: Vec<Raster<T>>,
    ) -> Result<Self> {
        Ok(TrainBatch {
            images: stack_images(images)?,
            pixel_labels,
            object_labels,
            object_maps,
        })
    }
}

/// Stacks equally sized images into a `B x 1 x H x W` tensor.
pub fn stack_images<T: Scalar>(images: &[Raster<T>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape("images in a batch must share their size"));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Output of a forward pass recorded on a tape.
pub struct Forward {
    /// Encoder output, `B x C4 x H/8 x W/8`.
    pub features: Var,
    pub pixel: Var,
    pub object: Var,
    /// Tape handle of every trainable parameter, in parameter order.
    pub params: Vec<Var>,
    running: Vec<(usize, BatchNormStats<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperEdge<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

struct Builder<'a, T> {
    params: &'a ModelParams<T>,
    tape: &'a mut Tape<T>,
    training: bool,
    leaves: Vec<Var>,
    running: Vec<(usize, BatchNormStats<f64>)>,
}

impl<T: Scalar> Builder<'_, T> {
    fn param(&mut self, name: &str) -> Result<Var> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
        let v = self.tape.leaf(t.clone().with_requires_grad(self.training));
        self.leaves.push(v);
        Ok(v)
    }

    fn conv(&mut self, x: Var, name: &str, pad: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.tape.conv2d(x, w, Some(b), 1, pad)
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let mean_name = format!("{name}.running_mean");
        let mean_idx = self
            .params
            .index_of(&mean_name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{mean_name}`")))?;
        let var = self
            .params
            .get(&format!("{name}.running_var"))
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}.running_var`")))?;
        let mut stats = BatchNormStats::<T>::new(var.numel());
        stats.mean = self.params.entries[mean_idx].1.data().to_vec();
        stats.var = var.data().to_vec();
        let out = self.tape.batch_norm(x, gamma, beta, &mut stats, self.training)?;
        if self.training {
            let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect();
            let mut s64 = BatchNormStats::<f64>::new(stats.channels());
            s64.mean = to64(&stats.mean);
            s64.var = to64(&stats.var);
            self.running.push((mean_idx, s64));
        }
        Ok(out)
    }

    /// conv, bn, optional relu
    fn unit(&mut self, x: Var, name: &str, pad: usize, relu: bool) -> Result<Var> {
        let y = self.conv(x, name, pad)?;
        let y = self.bn(y, &format!("{name}.bn"))?;
        Ok(if relu { self.tape.relu(y) } else { y })
    }
}

impl<T: Scalar> SuperEdge<T> {
    /// He-initialised weights drawn from the `(seed, INIT)` stream.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::streams::INIT);
        Self::build(config, |shape, fan_in| Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), &mut rng))
    }

    /// Every weight and bias zero: both heads output 1/65 everywhere.
    pub fn zeroed(config: ModelConfig) -> Self {
        Self::build(config, |shape, _| Tensor::zeros(shape))
    }

    fn build(config: ModelConfig, mut weight: impl FnMut(Vec<usize>, usize) -> Tensor<T>) -> Self {
        let mut params = ModelParams { entries: Vec::new() };
        let mut unit = |params: &mut ModelParams<T>, name: &str, cin: usize, cout: usize, k: usize| {
            params.push(format!("{name}.weight"), weight(vec![cout, cin, k, k], cin * k * k));
            params.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
            params.push(format!("{name}.bn.gamma"), Tensor::ones(vec![cout]));
            params.push(format!("{name}.bn.beta"), Tensor::zeros(vec![cout]));
            params.push(format!("{name}.bn.running_mean"), Tensor::zeros(vec![cout]));
            params.push(format!("{name}.bn.running_var"), Tensor::ones(vec![cout]));
        };
        let mut cin = 1;
        for (b, &c) in config.channels.iter().enumerate() {
            unit(&mut params, &format!("enc{}.conv1", b + 1), cin, c, 3);
            unit(&mut params, &format!("enc{}.conv2", b + 1), c, c, 3);
            cin = c;
        }
        let (feat, head) = (config.channels[3], config.head_channels);
        unit(&mut params, "pix.conv1", feat, head, 3);
        unit(&mut params, "pix.conv2", head, CELL_CLASSES, 1);
        unit(&mut params, "obj.conv1", feat, head, 3);
        unit(&mut params, "obj.conv2", head, 3 * CELL_CLASSES, 1);
        params.push("obj.proj.weight".into(), weight(vec![CELL_CLASSES, CELL_CLASSES, 1, 1], CELL_CLASSES));
        params.push("obj.proj.bias".into(), Tensor::zeros(vec![CELL_CLASSES]));
        SuperEdge { config, params }
    }

    /// Wraps loaded parameters after checking them against a fresh layout.
    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let template = Self::zeroed(config);
        if template.params.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors for this model, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in template.params.entries.iter().zip(&params.entries) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Format(format!(
                    "tensor `{n2}` {:?} does not match expected `{n1}` {:?}",
                    t2.shape(),
                    t1.shape()
                )));
            }
        }
        Ok(SuperEdge { config, params })
    }

    /// Adam state over the trainable parameters.
    pub fn adam(&self, lr: f64) -> AdamState<T> {
        AdamState::new(self.params.trainable(), lr)
    }

    /// Records the network on `tape`. `images` is `B x 1 x H x W` with `H`, `W`
    /// multiples of 8. Batch-norm statistics are only committed by
    /// [`SuperEdge::commit`].
    pub fn forward(&self, tape: &mut Tape<T>, images: Tensor<T>, training: bool) -> Result<Forward> {
        let (_, c, h, w) = images.dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("expected single-channel input, got {c} channels")));
        }
        if h % CELL != 0 || w % CELL != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("input {h}x{w} is not a multiple of {CELL}; pad first")));
        }
        let mut b = Builder {
            params: &self.params,
            tape,
            training,
            leaves: Vec::new(),
            running: Vec::new(),
        };
        let mut x = b.tape.leaf(images);
        for block in 1..=4 {
            x = b.unit(x, &format!("enc{block}.conv1"), 1, true)?;
            x = b.unit(x, &format!("enc{block}.conv2"), 1, true)?;
            if block < 4 {
                x = b.tape.max_pool2d(x, 2)?;
            }
        }
        let features = x;

        let p = b.unit(features, "pix.conv1", 1, true)?;
        let pixel = b.unit(p, "pix.conv2", 0, false)?;

        let o = b.unit(features, "obj.conv1", 1, true)?;
        let qkv = b.unit(o, "obj.conv2", 0, false)?;
        let q = b.tape.slice_channels(qkv, 0, CELL_CLASSES)?;
        let k = b.tape.slice_channels(qkv, CELL_CLASSES, CELL_CLASSES)?;
        let v = b.tape.slice_channels(qkv, 2 * CELL_CLASSES, CELL_CLASSES)?;
        let att = b.tape.scaled_dot_attention(q, k, v)?;
        let object = b.conv(att, "obj.proj", 0)?;

        Ok(Forward {
            features,
            pixel,
            object,
            params: b.leaves,
            running: b.running,
        })
    }

    /// Stores the batch-norm running statistics gathered by a training forward.
    pub fn commit(&mut self, forward: &Forward) {
        for (mean_idx, stats) in &forward.running {
            let mean: Vec<T> = stats.mean.iter().map(|&v| T::lit(v)).collect();
            let var: Vec<T> = stats.var.iter().map(|&v| T::lit(v)).collect();
            self.params.entries[*mean_idx].1.data_mut().copy_from_slice(&mean);
            self.params.entries[*mean_idx + 1].1.data_mut().copy_from_slice(&var);
        }
    }

    /// Eval-mode logits `(pixel, object)`, each `B x 65 x H/8 x W/8`.
    pub fn logits(&self, images: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, images, false)?;
        Ok((tape.value(f.pixel).clone(), tape.value(f.object).clone()))
    }

    /// Forward, summed loss, backward, one Adam step. Returns `(l_pix, l_obj)`.
    pub fn train_step(&mut self, batch: &TrainBatch<T>, adam: &mut AdamState<T>, cfg: &LossConfig) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch.images.clone(), true)?;
        let l_pix = loss_pix(&mut tape, f.pixel, &batch.pixel_labels)?;
        let l_obj = loss_obj(&mut tape, f.object, &batch.object_labels, &batch.object_maps, cfg)?;
        let total = loss_total(&mut tape, l_pix, l_obj)?;
        let (vp, vo) = (tape.value(l_pix).item()?.as_f64(), tape.value(l_obj).item()?.as_f64());
        if !vp.is_finite() || !vo.is_finite() {
            return Err(Error::NonFinite(format!("loss is not finite (l_pix = {vp}, l_obj = {vo})")));
        }
        tape.backward(total)?;

        let mut trainable: Vec<&mut Tensor<T>> = self
            .params
            .entries
            .iter_mut()
            .filter(|(n, _)| ModelParams::<T>::is_trainable(n))
            .map(|(_, t)| t)
            .collect();
        if trainable.len() != f.params.len() {
            return Err(Error::invalid("forward pass did not visit every parameter"));
        }
        for (p, &v) in trainable.iter_mut().zip(&f.params) {
            p.zero_grad();
            let g = tape.grad(v).ok_or_else(|| Error::invalid("parameter received no gradient"))?;
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("gradient is not finite".into()));
            }
            p.accumulate_grad(g)?;
        }
        adam_step(&mut trainable, adam)?;
        for p in trainable {
            p.zero_grad();
        }
        self.commit(&f);
        Ok((vp, vo))
    }

    /// Pixel- and object-head probability maps for one image of any size.
    ///
    /// The image is replicate-padded to a multiple of 8 and the maps cropped back.
    pub fn predict(&self, img: &Raster<T>) -> Result<(Raster<T>, Raster<T>)> {
        let (h, w) = img.dims();
        let (ph, pw) = (h.div_ceil(CELL) * CELL, w.div_ceil(CELL) * CELL);
        let padded = img.pad_replicate(ph, pw);
        let (pix, obj) = self.logits(stack_images(std::slice::from_ref(&padded))?)?;
        let pix = cells_to_edgemap(&pix)?.remove(0).crop(0, 0, h, w)?;
        let obj = cells_to_edgemap(&obj)?.remove(0).crop(0, 0, h, w)?;
        Ok((pix, obj))
    }
}
