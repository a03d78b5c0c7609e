use super::tape::{Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) struct Saved<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    weights: Vec<T>,
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    saved: &Saved<T>,
    gout: T,
) -> Vec<T> {
    let plane = h * w;
    let mut dx = vec![T::zero(); saved.probs.len()];
    for b in 0..n {
        for p in 0..plane {
            let cell = b * plane + p;
            let wgt = saved.weights[cell] * gout;
            if wgt == T::zero() {
                continue;
            }
            for ch in 0..c {
                let i = (b * c + ch) * plane + p;
                let target = if ch == saved.labels[cell] { T::one() } else { T::zero() };
                dx[i] = wgt * (saved.probs[i] - target);
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    /// Weighted cell-wise cross-entropy `sum_cells weight * -log softmax(logits)[label]`.
    ///
    /// `labels` and `weights` are indexed `(n, h, w)` in row-major order and
    /// must cover every spatial cell of the `N x C x H x W` logits.
    pub fn cross_entropy_cell(&mut self, logits: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let x = self.value(logits);
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let cells = n * plane;
        if labels.len() != cells || weights.len() != cells {
            return Err(Error::shape(format!(
                "cross_entropy_cell: {cells} cells but {} labels and {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy_cell: label {bad} out of range 0..{c}"
            )));
        }
        if weights.iter().any(|&wt| !(wt >= T::zero())) {
            return Err(Error::invalid("cross_entropy_cell: weights must be nonnegative"));
        }
        let mut probs = vec![T::zero(); x.numel()];
        let mut total = 0.0f64;
        let mut exps = vec![0.0f64; c];
        for b in 0..n {
            for p in 0..plane {
                let cell = b * plane + p;
                let at = |ch: usize| (b * c + ch) * plane + p;
                let max = (0..c).map(|ch| x.data()[at(ch)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (ch, e) in exps.iter_mut().enumerate() {
                    *e = (x.data()[at(ch)].as_f64() - max).exp();
                    sum += *e;
                }
                for (ch, e) in exps.iter().enumerate() {
                    probs[at(ch)] = T::lit(e / sum);
                }
                let nll = max + sum.ln() - x.data()[at(labels[cell])].as_f64();
                total += weights[cell].as_f64() * nll;
            }
        }
        let saved = Saved {
            probs,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push(Tensor::scalar(T::lit(total)), Op::CrossEntropy { logits, saved }, &[logits]))
    }
}
