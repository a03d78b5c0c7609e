use super::tape::{Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn softmax_channel_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = vec![T::zero(); x.numel()];
    let mut buf = vec![0.0f64; c];
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let max = (0..c).map(|ch| x.data()[at(ch)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (ch, e) in buf.iter_mut().enumerate() {
                *e = (x.data()[at(ch)].as_f64() - max).exp();
                total += *e;
            }
            for (ch, e) in buf.iter().enumerate() {
                out[at(ch)] = T::lit(e / total);
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

pub(crate) fn softmax_channel_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    y: &[T],
    gout: &[T],
) -> Vec<T> {
    let plane = h * w;
    let mut dx = vec![T::zero(); y.len()];
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let dot: f64 = (0..c).map(|ch| (y[at(ch)] * gout[at(ch)]).as_f64()).sum();
            for ch in 0..c {
                let i = at(ch);
                dx[i] = T::lit(y[i].as_f64() * (gout[i].as_f64() - dot));
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    /// Softmax across the channel axis at every `(n, h, w)` position.
    pub fn softmax_channel(&mut self, input: Var) -> Result<Var> {
        let out = softmax_channel_forward(self.value(input))?;
        Ok(self.push(out, Op::SoftmaxChannel(input), &[input]))
    }

    /// Non-overlapping `size x size` max pooling (floor on ragged borders).
    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        if size == 0 || h < size || w < size {
            return Err(Error::shape(format!("max_pool2d: window {size} on {h}x{w}")));
        }
        let (oh, ow) = (h / size, w / size);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane_idx in 0..n * c {
            let base = plane_idx * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * size + dy) * w + ox * size + dx;
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }
}
