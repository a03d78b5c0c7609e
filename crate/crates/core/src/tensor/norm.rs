use super::tape::{Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormStats<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) struct Saved<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    training: bool,
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[T],
    saved: &Saved<T>,
    gout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dx = vec![T::zero(); gout.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                sum_dy += gout[i].as_f64();
                sum_dy_xhat += (gout[i] * saved.xhat[i]).as_f64();
            }
        }
        dgamma[ch] = T::lit(sum_dy_xhat);
        dbeta[ch] = T::lit(sum_dy);
        let g = gamma[ch].as_f64();
        let inv_std = saved.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let v = if saved.training {
                    g * inv_std / count
                        * (count * gout[i].as_f64() - sum_dy - saved.xhat[i].as_f64() * sum_dy_xhat)
                } else {
                    g * inv_std * gout[i].as_f64()
                };
                dx[i] = T::lit(v);
            }
        }
    }
    (dx, dgamma, dbeta)
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalisation of an NCHW tensor.
    ///
    /// In training mode the batch statistics are used and folded into
    /// `stats` with its momentum; in eval mode the running statistics are used.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        training: bool,
    ) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(format!(
                    "batch_norm: {name} shape {:?} for {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        if stats.channels() != c {
            return Err(Error::shape(format!(
                "batch_norm: running stats for {} channels, input has {c}",
                stats.channels()
            )));
        }
        let plane = h * w;
        let count = n * plane;
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        let mut inv_stds = vec![0.0f64; c];
        for ch in 0..c {
            let (mean, var) = if training {
                let (mut s, mut s2) = (0.0f64, 0.0f64);
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for &v in &x.data()[base..base + plane] {
                        s += v.as_f64();
                    }
                }
                let mean = s / count as f64;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for &v in &x.data()[base..base + plane] {
                        let d = v.as_f64() - mean;
                        s2 += d * d;
                    }
                }
                let var = s2 / count as f64;
                let m = stats.momentum;
                let unbiased = if count > 1 { var * count as f64 / (count - 1) as f64 } else { var };
                stats.mean[ch] = T::lit((1.0 - m) * stats.mean[ch].as_f64() + m * mean);
                stats.var[ch] = T::lit((1.0 - m) * stats.var[ch].as_f64() + m * unbiased);
                (mean, var)
            } else {
                (stats.mean[ch].as_f64(), stats.var[ch].as_f64())
            };
            let inv_std = 1.0 / (var.max(0.0) + stats.eps).sqrt();
            inv_stds[ch] = inv_std;
            let (gc, bc) = (g[ch].as_f64(), bt[ch].as_f64());
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (x.data()[i].as_f64() - mean) * inv_std;
                    xhat[i] = T::lit(xh);
                    out[i] = T::lit(gc * xh + bc);
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved: Saved {
                    xhat,
                    inv_std: inv_stds,
                    training,
                },
            },
            &[input, gamma, beta],
        ))
    }
}
