//! Central finite-difference checks of every differentiable tape op.
//!
//! Run in f64 so that the difference quotient (h = 1e-3) is not swamped by
//! rounding; the error measure is `|analytic - numeric| / max(|analytic|,
//! |numeric|)` over the whole gradient vector.

use edgelab::rng;
use edgelab::tensor::{BatchNormStats, Tape, Tensor, Var};
use rand::Rng as _;

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const CASES: u64 = 20;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// `sum(op(inputs) * probe)` so that every output element carries a distinct weight.
fn probed(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let mut r = rng::stream(seed, 99);
    let probe = tape.leaf(Tensor::randn(shape, 1.0, &mut r));
    let m = tape.mul(out, probe).unwrap();
    tape.sum(m)
}

fn loss(inputs: &[Tensor<f64>], build: &Build, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let l = probed(&mut tape, out, seed);
    tape.value(l).item().unwrap()
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build, seed: u64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let out = build(&mut tape, &vars);
    let l = probed(&mut tape, out, seed);
    tape.backward(l).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).expect("gradient populated").to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..analytic.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            numeric[j] = (loss(&plus, build, seed) - loss(&minus, build, seed)) / (2.0 * H);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
        assert!(
            diff / scale < TOL,
            "{name}: input {i} shape {:?}: relative error {:.3e}",
            inputs[i].shape(),
            diff / scale
        );
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shape4(r: &mut rng::Rng, max: usize) -> Vec<usize> {
    (0..4).map(|_| r.random_range(1..=max)).collect()
}

/// Normal samples pushed at least `gap` away from zero (keeps ReLU kinks out of reach of h).
fn away_from_zero(shape: Vec<usize>, gap: f64, r: &mut rng::Rng) -> Tensor<f64> {
    let mut t = Tensor::randn(shape, 1.0, r);
    for v in t.data_mut() {
        *v += gap.copysign(*v);
    }
    t
}

#[test]
fn add_mul_scale_sum() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 1);
        let s = shape4(&mut r, 4);
        let a = Tensor::randn(s.clone(), 1.0, &mut r);
        let b = Tensor::randn(s, 1.0, &mut r);
        check("add", vec![a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap(), case);
        check("mul", vec![a.clone(), b], &|t, v| t.mul(v[0], v[1]).unwrap(), case);
        check("scale", vec![a.clone()], &|t, v| t.scale(v[0], -1.7), case);
        check("sum", vec![a], &|t, v| t.sum(v[0]), case);
    }
}

#[test]
fn relu() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 2);
        let x = away_from_zero(shape4(&mut r, 5), 0.05, &mut r);
        check("relu", vec![x], &|t, v| t.relu(v[0]), case);
    }
}

#[test]
fn slice_channels() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 3);
        let mut s = shape4(&mut r, 4);
        s[1] = r.random_range(2..=6);
        let start = r.random_range(0..s[1] - 1);
        let len = r.random_range(1..=s[1] - start);
        let x = Tensor::randn(s, 1.0, &mut r);
        check("slice_channels", vec![x], &move |t, v| t.slice_channels(v[0], start, len).unwrap(), case);
    }
}

#[test]
fn conv2d() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 4);
        let k = [1, 3, 5][r.random_range(0..3)];
        let n = r.random_range(1..=2);
        let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
        let (h, w) = (r.random_range(k..=6), r.random_range(k..=6));
        let pad = r.random_range(0..=k / 2);
        let stride = r.random_range(1..=2);
        let x = Tensor::randn(vec![n, cin, h, w], 1.0, &mut r);
        let wt = Tensor::randn(vec![cout, cin, k, k], 0.5, &mut r);
        let b = Tensor::randn(vec![cout], 0.5, &mut r);
        check(
            "conv2d",
            vec![x, wt, b],
            &move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap(),
            case,
        );
    }
}

#[test]
fn batch_norm_training_and_eval() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 5);
        let mut s = shape4(&mut r, 4);
        // at least two values per channel so the batch variance is informative
        s[0] = r.random_range(2..=3);
        let c = s[1];
        let x = Tensor::randn(s, 1.0, &mut r);
        let gamma = Tensor::randn(vec![c], 1.0, &mut r);
        let beta = Tensor::randn(vec![c], 1.0, &mut r);
        let training = case % 4 != 3;
        check(
            "batch_norm",
            vec![x, gamma, beta],
            &move |t, v| {
                let mut stats = BatchNormStats::new(c);
                stats.var = vec![0.7; c];
                t.batch_norm(v[0], v[1], v[2], &mut stats, training).unwrap()
            },
            case,
        );
    }
}

#[test]
fn max_pool() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 6);
        let size = r.random_range(1..=3);
        let (n, c) = (r.random_range(1..=2), r.random_range(1..=3));
        let (h, w) = (r.random_range(size..=6), r.random_range(size..=6));
        // a shuffled ramp: distinct values spaced far wider than h
        let count = n * c * h * w;
        let mut values: Vec<f64> = (0..count).map(|i| i as f64 * 0.1).collect();
        for i in (1..count).rev() {
            values.swap(i, r.random_range(0..=i));
        }
        let x = Tensor::new(vec![n, c, h, w], values).unwrap();
        check("max_pool2d", vec![x], &move |t, v| t.max_pool2d(v[0], size).unwrap(), case);
    }
}

#[test]
fn softmax_channel() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 7);
        let x = Tensor::randn(shape4(&mut r, 5), 2.0, &mut r);
        check("softmax_channel", vec![x], &|t, v| t.softmax_channel(v[0]).unwrap(), case);
    }
}

#[test]
fn attention() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 8);
        let n = r.random_range(1..=2);
        let (d, dv) = (r.random_range(1..=4), r.random_range(1..=4));
        let (h, w) = (r.random_range(1..=3), r.random_range(1..=3));
        let q = Tensor::randn(vec![n, d, h, w], 1.0, &mut r);
        let k = Tensor::randn(vec![n, d, h, w], 1.0, &mut r);
        let v = Tensor::randn(vec![n, dv, h, w], 1.0, &mut r);
        check("attention", vec![q, k, v], &|t, v| t.scaled_dot_attention(v[0], v[1], v[2]).unwrap(), case);
    }
}

#[test]
fn cross_entropy_cell() {
    for case in 0..CASES {
        let mut r = rng::stream(case, 9);
        let mut s = shape4(&mut r, 3);
        s[1] = r.random_range(2..=65);
        let cells = s[0] * s[2] * s[3];
        let labels: Vec<usize> = (0..cells).map(|_| r.random_range(0..s[1])).collect();
        let weights: Vec<f64> = (0..cells).map(|_| r.random::<f64>()).collect();
        let x = Tensor::randn(s, 2.0, &mut r);
        check(
            "cross_entropy_cell",
            vec![x],
            &move |t, v| t.cross_entropy_cell(v[0], &labels, &weights).unwrap(),
            case,
        );
    }
}

#[test]
fn composed_network_block() {
    // conv -> bn -> relu -> pool -> attention, the pattern used by the model
    for case in 0..CASES {
        let mut r = rng::stream(case, 10);
        let x = Tensor::randn(vec![2, 2, 4, 4], 1.0, &mut r);
        let w = Tensor::randn(vec![3, 2, 3, 3], 0.5, &mut r);
        check(
            "block",
            vec![x, w],
            &|t, v| {
                let y = t.conv2d(v[0], v[1], None, 1, 1).unwrap();
                let g = t.leaf(Tensor::ones(vec![3]));
                let b = t.leaf(Tensor::full(vec![3], 0.3));
                let mut stats = BatchNormStats::new(3);
                let y = t.batch_norm(y, g, b, &mut stats, true).unwrap();
                let y = t.relu(y);
                let y = t.max_pool2d(y, 2).unwrap();
                t.scaled_dot_attention(y, y, y).unwrap()
            },
            case,
        );
    }
}
