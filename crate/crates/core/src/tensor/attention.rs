use super::tape::{Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Dims {
    n: usize,
    d: usize,
    dv: usize,
    l: usize,
    h: usize,
    w: usize,
}

fn dims<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Dims> {
    let (n, d, h, w) = q.dims4()?;
    let (nk, dk, hk, wk) = k.dims4()?;
    let (nv, dv, hv, wv) = v.dims4()?;
    if nk != n || nv != n {
        return Err(Error::shape("attention: batch sizes differ"));
    }
    if dk != d {
        return Err(Error::shape(format!(
            "attention: query has {d} channels, key has {dk}"
        )));
    }
    if hk * wk != h * w || hv * wv != h * w {
        return Err(Error::shape(format!(
            "attention: position counts differ (q {}, k {}, v {})",
            h * w,
            hk * wk,
            hv * wv
        )));
    }
    Ok(Dims {
        n,
        d,
        dv,
        l: h * w,
        h,
        w,
    })
}

/// Row-wise softmax of an `l x l` score block, in place.
fn softmax_rows<T: Scalar>(scores: &mut [T], l: usize) {
    for row in scores.chunks_mut(l) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let exps: Vec<f64> = row
            .iter()
            .map(|v| {
                let e = (v.as_f64() - max).exp();
                total += e;
                e
            })
            .collect();
        for (slot, e) in row.iter_mut().zip(exps) {
            *slot = T::lit(e / total);
        }
    }
}

pub(crate) fn attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let Dims { n, d, dv, l, h, w } = dims(q, k, v)?;
    let scale = T::lit(1.0 / (d as f64).sqrt());
    let li = l as isize;
    let mut probs = vec![T::zero(); n * l * l];
    let mut out = vec![T::zero(); n * dv * l];
    for b in 0..n {
        let qb = &q.data()[b * d * l..(b + 1) * d * l];
        let kb = &k.data()[b * d * l..(b + 1) * d * l];
        let vb = &v.data()[b * dv * l..(b + 1) * dv * l];
        let pb = &mut probs[b * l * l..(b + 1) * l * l];
        // scores (l x l) = Q (l x d) * K^T (d x l); tensors are channel-major
        T::gemm(l, d, l, scale, qb, (1, li), kb, (li, 1), T::zero(), pb, (li, 1));
        softmax_rows(pb, l);
        let ob = &mut out[b * dv * l..(b + 1) * dv * l];
        T::gemm(l, l, dv, T::one(), pb, (li, 1), vb, (1, li), T::zero(), ob, (1, li));
    }
    Ok((Tensor::new(vec![n, dv, h, w], out)?, probs))
}

pub(crate) fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    gout: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let Dims { n, d, dv, l, .. } = dims(q, k, v)?;
    let scale = T::lit(1.0 / (d as f64).sqrt());
    let li = l as isize;
    let mut dq = vec![T::zero(); q.numel()];
    let mut dk = vec![T::zero(); k.numel()];
    let mut dvv = vec![T::zero(); v.numel()];
    let mut ds = vec![T::zero(); l * l];
    for b in 0..n {
        let qb = &q.data()[b * d * l..(b + 1) * d * l];
        let kb = &k.data()[b * d * l..(b + 1) * d * l];
        let vb = &v.data()[b * dv * l..(b + 1) * dv * l];
        let pb = &probs[b * l * l..(b + 1) * l * l];
        let gb = &gout[b * dv * l..(b + 1) * dv * l];

        // dV (l x dv) = A^T * dO
        T::gemm(l, l, dv, T::one(), pb, (1, li), gb, (1, li), T::zero(), &mut dvv[b * dv * l..(b + 1) * dv * l], (1, li));
        // dA (l x l) = dO * V^T
        T::gemm(l, dv, l, T::one(), gb, (1, li), vb, (li, 1), T::zero(), &mut ds, (li, 1));
        for (ds_row, p_row) in ds.chunks_mut(l).zip(pb.chunks(l)) {
            let dot: f64 = ds_row.iter().zip(p_row).map(|(&a, &p)| (a * p).as_f64()).sum();
            for (a, &p) in ds_row.iter_mut().zip(p_row) {
                *a = T::lit(p.as_f64() * (a.as_f64() - dot));
            }
        }
        // dQ = dS * K * scale, dK = dS^T * Q * scale
        T::gemm(l, l, d, scale, &ds, (li, 1), kb, (1, li), T::zero(), &mut dq[b * d * l..(b + 1) * d * l], (1, li));
        T::gemm(l, l, d, scale, &ds, (1, li), qb, (1, li), T::zero(), &mut dk[b * d * l..(b + 1) * d * l], (1, li));
    }
    Ok((dq, dk, dvv))
}

impl<T: Scalar> Tape<T> {
    /// `softmax(Q K^T / sqrt(d)) V` over the spatial positions of NCHW inputs.
    ///
    /// Each position is a token whose features are its channel vector; the
    /// result has `v`'s channel count and `q`'s spatial layout.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (out, probs) = attention_forward(self.value(q), self.value(k), self.value(v))?;
        Ok(self.push(out, Op::Attention { q, k, v, probs }, &[q, k, v]))
    }
}
