use edgelab::imaging::Raster;
use edgelab::model::{
    balance_weights, cells_to_edgemap, edgemap_to_cells, loss_obj, loss_pix, loss_total, CellLabels, LossConfig, ModelConfig,
    ModelParams, SuperEdge, TrainBatch, CELL_CLASSES, DUSTBIN,
};
use edgelab::rng;
use edgelab::synthetic::{dataset_sample, SyntheticConfig};
use edgelab::tensor::{Tape, Tensor};
use rand::Rng as _;

const TINY: ModelConfig = ModelConfig {
    channels: [4, 4, 8, 8],
    head_channels: 8,
};

/// `-log softmax(logits)[label]` of one cell of a `1 x 65 x rows x cols` tensor.
fn cell_ce(logits: &Tensor<f64>, cell: usize, label: usize) -> f64 {
    let plane = logits.shape()[2] * logits.shape()[3];
    let at = |k: usize| logits.data()[k * plane + cell];
    let max = (0..CELL_CLASSES).map(at).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + (0..CELL_CLASSES).map(|k| (at(k) - max).exp()).sum::<f64>().ln();
    lse - at(label)
}

fn random_binary(r: &mut rng::Rng, h: usize, w: usize, p: f64) -> Raster<f64> {
    Raster::from_fn(h, w, |_, _| if r.random::<f64>() < p { 1.0 } else { 0.0 })
}

#[test]
fn pixel_loss_matches_scalar_oracle() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, 1);
        let logits = Tensor::<f64>::randn(vec![1, 65, 2, 2], 2.0, &mut r);
        let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..65)).collect();
        let mut tape = Tape::new();
        let v = tape.leaf(logits.clone());
        let l = loss_pix(&mut tape, v, &[CellLabels { rows: 2, cols: 2, labels: labels.clone() }]).unwrap();
        // 64 / (H W) with H = W = 16 is 1/4
        let expect: f64 = (0..4).map(|c| cell_ce(&logits, c, labels[c])).sum::<f64>() * 64.0 / 256.0;
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-5);
    }
}

#[test]
fn pixel_loss_is_small_for_one_hot_logits() {
    let labels = vec![5, DUSTBIN, 63, 0];
    let mut data = vec![0.0; 65 * 4];
    for (cell, &y) in labels.iter().enumerate() {
        data[y * 4 + cell] = 40.0;
    }
    let mut tape = Tape::<f64>::new();
    let v = tape.leaf(Tensor::new(vec![1, 65, 2, 2], data).unwrap());
    let l = loss_pix(&mut tape, v, &[CellLabels { rows: 2, cols: 2, labels }]).unwrap();
    assert!(tape.value(l).item().unwrap() < 1e-6);
}

#[test]
fn object_loss_matches_scalar_oracle() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, 2);
        let gt = random_binary(&mut r, 16, 16, 0.05);
        let labels = edgemap_to_cells(&gt, &mut r).unwrap();
        let logits = Tensor::<f64>::randn(vec![1, 65, 2, 2], 2.0, &mut r);
        let cfg = LossConfig { lambda: 1.1 };
        let mut tape = Tape::new();
        let v = tape.leaf(logits.clone());
        let l = loss_obj(&mut tape, v, std::slice::from_ref(&labels), std::slice::from_ref(&gt), &cfg).unwrap();
        let pos = gt.pixels().iter().filter(|&&v| v == 1.0).count() as f64;
        let neg = 256.0 - pos;
        let (alpha, beta) = (1.1 * pos / (pos + neg), neg / (pos + neg));
        let expect: f64 = (0..4)
            .map(|c| {
                let y = labels.labels[c];
                (if y == DUSTBIN { alpha } else { beta }) * cell_ce(&logits, c, y)
            })
            .sum();
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-5, "seed {seed}");
    }
}

#[test]
fn quarter_edge_map_weights_by_hand() {
    // 2x2 cells, top quarter of the pixels are edges
    let gt = Raster::<f64>::from_fn(16, 16, |y, _| if y < 4 { 1.0 } else { 0.0 });
    let (a, b) = balance_weights(&gt, &LossConfig { lambda: 1.1 });
    assert!((a - 0.275).abs() < 1e-12);
    assert!((b - 0.75).abs() < 1e-12);
    let mut r = rng::stream(0, 3);
    let labels = edgemap_to_cells(&gt, &mut r).unwrap();
    assert_eq!(labels.labels.iter().filter(|&&y| y == DUSTBIN).count(), 2);
    let logits = Tensor::<f64>::randn(vec![1, 65, 2, 2], 1.0, &mut r);
    let mut tape = Tape::new();
    let v = tape.leaf(logits.clone());
    let l = loss_obj(&mut tape, v, std::slice::from_ref(&labels), std::slice::from_ref(&gt), &LossConfig { lambda: 1.1 }).unwrap();
    let expect = 0.75 * (cell_ce(&logits, 0, labels.labels[0]) + cell_ce(&logits, 1, labels.labels[1]))
        + 0.275 * (cell_ce(&logits, 2, DUSTBIN) + cell_ce(&logits, 3, DUSTBIN));
    assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-5);
}

#[test]
fn balance_weight_identities() {
    for seed in 0..50 {
        let mut r = rng::stream(seed, 4);
        let p = r.random::<f64>();
        let lambda = 0.1 + 2.0 * r.random::<f64>();
        let gt = random_binary(&mut r, 24, 16, p).cast::<f32>();
        let pos = gt.count_nonzero() as f64;
        let neg = gt.len() as f64 - pos;
        let (a, b) = balance_weights(&gt, &LossConfig { lambda });
        assert!((a * (pos + neg) - lambda * pos).abs() < 1e-6);
        assert!((b * (pos + neg) - neg).abs() < 1e-6);
    }
    // degenerate maps divide by the pixel count only
    let cfg = LossConfig { lambda: 1.1 };
    assert_eq!(balance_weights(&Raster::<f32>::zeros(8, 8), &cfg), (0.0, 1.0));
    let (a, b) = balance_weights(&Raster::<f32>::filled(8, 8, 1.0), &cfg);
    assert!((a - 1.1).abs() < 1e-12 && b == 0.0);
}

#[test]
fn equal_weights_when_classes_balance() {
    // lambda |Y+| = |Y-|: 1/4 edge pixels and lambda = 3
    let gt = Raster::<f64>::from_fn(16, 16, |y, _| if y % 4 == 0 { 1.0 } else { 0.0 });
    let (a, b) = balance_weights(&gt, &LossConfig { lambda: 3.0 });
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn empty_pseudo_map_zeroes_the_object_loss() {
    for seed in 0..5 {
        let mut r = rng::stream(seed, 5);
        let gt = Raster::<f64>::zeros(16, 24);
        let labels = edgemap_to_cells(&gt, &mut r).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::randn(vec![1, 65, 2, 3], 5.0, &mut r));
        let l = loss_obj(&mut tape, v, &[labels], &[gt], &LossConfig::default()).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }
}

#[test]
fn object_loss_vanishes_with_confident_correct_logits() {
    let mut r = rng::stream(1, 6);
    let gt = random_binary(&mut r, 16, 16, 0.03);
    let labels = edgemap_to_cells(&gt, &mut r).unwrap();
    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 60.0] {
        let mut data = vec![0.0; 65 * 4];
        for (cell, &y) in labels.labels.iter().enumerate() {
            data[y * 4 + cell] = margin;
        }
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::new(vec![1, 65, 2, 2], data).unwrap());
        let l = loss_obj(&mut tape, v, std::slice::from_ref(&labels), std::slice::from_ref(&gt), &LossConfig::default()).unwrap();
        let value = tape.value(l).item().unwrap();
        assert!(value >= 0.0 && value < last);
        last = value;
    }
    assert!(last < 1e-6);
}

#[test]
fn total_loss_is_the_sum() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::scalar(1.5));
    let b = tape.leaf(Tensor::scalar(2.5));
    let t = loss_total(&mut tape, a, b).unwrap();
    assert_eq!(tape.value(t).item().unwrap(), 4.0);
    let z = tape.leaf(Tensor::scalar(0.0));
    let t = loss_total(&mut tape, z, z).unwrap();
    assert_eq!(tape.value(t).item().unwrap(), 0.0);
}

#[test]
fn two_pixel_cell_draws_are_fair() {
    let mut m = Raster::<f32>::zeros(8, 8);
    m.set(0, 0, 1.0);
    m.set(7, 7, 1.0);
    let mut r = rng::stream(2024, rng::streams::CELL_LABELS);
    let draws = 10_000;
    let mut zeros = 0;
    for _ in 0..draws {
        let y = edgemap_to_cells(&m, &mut r).unwrap().labels[0];
        assert!(y == 0 || y == 63);
        zeros += usize::from(y == 0);
    }
    let frac = zeros as f64 / draws as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");
}

#[test]
fn cells_round_trip_through_one_hot_logits() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, 7);
        // at most one edge pixel per cell
        let (rows, cols) = (3, 4);
        let mut map = Raster::<f32>::zeros(rows * 8, cols * 8);
        for cr in 0..rows {
            for cc in 0..cols {
                if r.random::<f64>() < 0.7 {
                    map.set(cr * 8 + r.random_range(0..8), cc * 8 + r.random_range(0..8), 1.0);
                }
            }
        }
        let cells = edgemap_to_cells(&map, &mut r).unwrap();
        let plane = rows * cols;
        let mut data = vec![0.0f32; 65 * plane];
        for (cell, &y) in cells.labels.iter().enumerate() {
            data[y * plane + cell] = 50.0;
        }
        let decoded = cells_to_edgemap(&Tensor::new(vec![1, 65, rows, cols], data).unwrap()).unwrap();
        assert_eq!(decoded[0].binarize(0.5), map);
    }
}

#[test]
fn uniform_logits_decode_to_one_over_65() {
    let maps = cells_to_edgemap(&Tensor::<f64>::full(vec![2, 65, 2, 3], 0.7)).unwrap();
    assert_eq!(maps.len(), 2);
    for m in &maps {
        assert_eq!(m.dims(), (16, 24));
        assert!(m.pixels().iter().all(|v| (v - 1.0 / 65.0).abs() < 1e-12));
    }
}

#[test]
fn depth_to_space_matches_index_arithmetic() {
    let mut r = rng::stream(3, 8);
    let (n, rows, cols) = (2, 2, 3);
    let logits = Tensor::<f64>::randn(vec![n, 65, rows, cols], 2.0, &mut r);
    let maps = cells_to_edgemap(&logits).unwrap();
    let plane = rows * cols;
    for b in 0..n {
        for h in 0..rows {
            for w in 0..cols {
                let cell = h * cols + w;
                let at = |k: usize| logits.data()[(b * 65 + k) * plane + cell];
                let z: f64 = (0..65).map(|k| at(k).exp()).sum();
                for k in 0..64 {
                    let expect = at(k).exp() / z;
                    assert!((maps[b].get(8 * h + k / 8, 8 * w + k % 8) - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn encoder_and_heads_follow_the_layer_table() {
    let model = SuperEdge::<f32>::new(ModelConfig::FULL, 0);
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, Tensor::zeros(vec![1, 1, 16, 16]), false).unwrap();
    assert_eq!(tape.value(f.features).shape(), &[1, 128, 2, 2]);
    assert_eq!(tape.value(f.pixel).shape(), &[1, 65, 2, 2]);
    assert_eq!(tape.value(f.object).shape(), &[1, 65, 2, 2]);
    assert_eq!(model.params.get("obj.conv2.weight").unwrap().shape(), &[195, 256, 1, 1]);
    assert_eq!(model.params.get("obj.proj.weight").unwrap().shape(), &[65, 65, 1, 1]);
    assert_eq!(model.params.get("pix.conv2.weight").unwrap().shape(), &[65, 256, 1, 1]);
}

#[test]
fn eval_forward_is_deterministic() {
    let model = SuperEdge::<f32>::new(TINY, 9);
    let mut r = rng::stream(9, 9);
    let x = Tensor::<f32>::randn(vec![2, 1, 16, 16], 1.0, &mut r);
    let a = model.logits(x.clone()).unwrap();
    let b = model.logits(x).unwrap();
    assert_eq!(a, b);
}

fn synthetic_batch(seed: u64, size: usize, batch: usize) -> TrainBatch<f32> {
    let cfg = SyntheticConfig {
        height: size,
        width: size,
        ..SyntheticConfig::default()
    };
    let mut r = rng::stream(seed, rng::streams::CELL_LABELS);
    let (mut images, mut cells, mut maps) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..batch {
        let s = dataset_sample(&cfg, seed, i).unwrap();
        cells.push(edgemap_to_cells(&s.gt_edges, &mut r).unwrap());
        images.push(s.image);
        maps.push(s.gt_edges);
    }
    TrainBatch::new(&images, cells.clone(), cells, maps).unwrap()
}

#[test]
fn gradients_reach_both_heads_and_the_encoder() {
    let model = SuperEdge::<f32>::new(TINY, 4);
    let batch = synthetic_batch(4, 32, 2);
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, batch.images.clone(), true).unwrap();
    let lp = loss_pix(&mut tape, f.pixel, &batch.pixel_labels).unwrap();
    let lo = loss_obj(&mut tape, f.object, &batch.object_labels, &batch.object_maps, &LossConfig::default()).unwrap();
    let total = loss_total(&mut tape, lp, lo).unwrap();
    tape.backward(total).unwrap();
    let names: Vec<&str> = model
        .params
        .entries()
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| ModelParams::<f32>::is_trainable(n))
        .collect();
    assert_eq!(names.len(), f.params.len());
    for prefix in ["pix.conv2.weight", "obj.conv2.weight", "obj.proj.weight", "enc1.conv1.weight"] {
        let i = names.iter().position(|n| *n == prefix).unwrap();
        let g = tape.grad(f.params[i]).unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "{prefix} has no gradient");
    }
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut model = SuperEdge::<f32>::new(TINY, 5);
        let batch = synthetic_batch(5, 32, 2);
        let mut adam = model.adam(1e-3);
        let losses: Vec<(f64, f64)> = (0..3)
            .map(|_| model.train_step(&batch, &mut adam, &LossConfig::default()).unwrap())
            .collect();
        (losses, model)
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la, lb);
    assert_eq!(ma, mb);
}

#[test]
fn short_overfit_decreases_the_loss() {
    let mut model = SuperEdge::<f32>::new(TINY, 6);
    let batch = synthetic_batch(6, 32, 2);
    let mut adam = model.adam(1e-2);
    let first = model.train_step(&batch, &mut adam, &LossConfig::default()).unwrap();
    let mut last = first;
    for _ in 0..30 {
        last = model.train_step(&batch, &mut adam, &LossConfig::default()).unwrap();
    }
    assert!(last.0 + last.1 < 0.5 * (first.0 + first.1), "{first:?} -> {last:?}");
}
